// Indexed execution against a linear-scan reference interpreter written from
// the search-language rules, over a seeded generator corpus.

#include <doctest.h>

#include <chrono>

#include "oracle_support.hpp"
#include "test_util.hpp"

using namespace logforge;

TEST_SUITE("oracle") {

TEST_CASE("indexed search equals the linear-scan reference on 200 generated queries") {
  auto t0 = std::chrono::steady_clock::now();
  test::TempDir dir;
  auto corpus = testing::build_corpus(dir.path(), 2018, 10000);
  REQUIRE(corpus->reference.size() == 10000);
  REQUIRE(corpus->idx->bucket_count() > 1);

  auto out = testing::compare(corpus->reference, corpus->context(), 200, 7);
  for (const auto& f : out.failures) MESSAGE(f);
  CHECK(out.mismatched == 0);
  CHECK(out.nonempty > 100);  // the generator is not just producing empty searches
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  MESSAGE("200 queries in " << secs << " s");
  CHECK(secs < 60);
}

}  // TEST_SUITE
