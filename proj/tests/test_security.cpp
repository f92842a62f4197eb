#include "doctest.h"
#include "logforge/error.hpp"
#include "logforge/expr.hpp"
#include "logforge/security.hpp"
#include "logforge/strings.hpp"

using namespace logforge;
using namespace logforge::security;

namespace {

AccessEvent access(std::string uri, std::string referer = "-", std::string method = "GET",
                   std::string host = "www.example.com") {
  AccessEvent e;
  e.id = 1;
  e.uri = std::move(uri);
  e.referer = std::move(referer);
  e.method = std::move(method);
  e.status = 200;
  e.client_ip = "10.0.0.9";
  e.target_host = std::move(host);
  return e;
}

Event access_event(EventId id, const std::string& uri, const std::string& referer = "-") {
  Event e;
  e.id = id;
  e.timestamp = 1516203039000000LL + static_cast<Timestamp>(id) * 1000000;
  e.sourcetype = "accesslog";
  e.fields = {{"uri", uri}, {"method", "GET"}, {"status", "200"}, {"referer", referer},
              {"target_host", "www.example.com"}, {"client_ip", "10.0.0.1"}};
  return e;
}

Value eval(const std::string& expr, std::map<std::string, std::string> fields = {}) {
  auto e = query::parse_expression(expr);
  return query::evaluate(*e, [&](const std::string& k) -> Value {
    auto it = fields.find(k);
    return it == fields.end() ? Value() : Value(it->second);
  }, {});
}

}  // namespace

TEST_SUITE("security") {

TEST_CASE("expressions") {
  CHECK(eval("1 + 2 * 3").number() == 7);
  CHECK(eval("(1 + 2) * 3").number() == 9);
  CHECK(eval("7 % 4").number() == 3);
  CHECK(eval("1 / 0").is_null());
  CHECK(eval("a + 1", {{"a", "41"}}).number() == 42);
  CHECK(eval("a == \"x\" AND NOT b == 2", {{"a", "x"}, {"b", "3"}}).truthy());
  CHECK_FALSE(eval("missing == 1").truthy());
  CHECK(eval("if(a > 10, \"big\", \"small\")", {{"a", "11"}}).to_string() == "big");
  CHECK(eval("like(u, \"http:/%\")", {{"u", "http://x"}}).truthy());
  CHECK(eval("like(u, \"*<*>*</*>*\")", {{"u", "/q?<b>x</b>"}}).truthy());
  CHECK_FALSE(eval("like(u, \"a_c\")", {{"u", "abbc"}}).truthy());
  CHECK(eval("match(u, \"^ab+c$\")", {{"u", "abbc"}}).truthy());
  CHECK(eval("round(2.567, 2)").number() == doctest::Approx(2.57));
  CHECK(eval("substr(\"hello\", 2, 3)").to_string() == "ell");
  CHECK(eval("coalesce(nope, \"d\")").to_string() == "d");
  CHECK(eval("urldecode(\"%3Cb%3E\")").to_string() == "<b>");
  CHECK(eval("len(\"abc\") + tonumber(\"2\")").number() == 5);
  CHECK(eval("\"a\" + \"b\"").to_string() == "ab");
  CHECK_THROWS_AS(eval("\"a\" * 2"), query::EvalError);
  CHECK_THROWS_AS(query::parse_expression("nosuchfn(1)"), ParseError);
  CHECK_THROWS_AS(query::parse_expression("like(1)"), ParseError);
  CHECK(query::parse_duration("5m") == 300000000);
  CHECK(query::parse_duration("100us") == 100);
  CHECK_FALSE(query::parse_duration("5y").has_value());
}

TEST_CASE("xss") {
  CHECK(rule_xss(access("/q?x=<script>alert('XSS')</script>")));
  CHECK(rule_xss(access("/q?x=%3Cscript%3Ealert(1)%3C/script%3E")));
  CHECK_FALSE(rule_xss(access("/index.html")));
  CHECK(rule_xss(access("/q?u=JavaScript:alert(1)")));
}

TEST_CASE("session") {
  CHECK(rule_session(access("/login.jsp?userId=a&password=b")));
  CHECK(rule_session(access("/app;jsessionid=ABC123")));
  CHECK_FALSE(rule_session(access("/login.jsp")));
}

TEST_CASE("csrf") {
  RefererLookup lk;
  lk.add("www.example.com", "10.0.0.1");
  lk.add("forum.site", "10.9.9.9");
  CHECK(rule_csrf(access("/trx.do?amt=100&toAcct=1234", "http://forum.site/post/1"), lk));
  CHECK_FALSE(rule_csrf(access("/trx.do?amt=100", "-"), lk));
  CHECK_FALSE(rule_csrf(access("/trx.do?amt=100", "https://www.example.com/home"), lk));
  // Plain navigation from another site is not state changing.
  CHECK_FALSE(rule_csrf(access("/index.html", "http://forum.site/"), lk));
  CHECK(rule_csrf(access("/transfer", "http://forum.site/", "POST"), lk));
  CsrfOutcome out = CsrfOutcome::kNone;
  CHECK_FALSE(rule_csrf(access("/trx.do?amt=1", "http://unknown.org/"), lk, &out));
  CHECK(out == CsrfOutcome::kUnresolved);
  auto parsed = RefererLookup::parse_csv("domain,ip\nA.example,1.1.1.1\n");
  CHECK(parsed.resolve("http://a.example:8080/x") == "1.1.1.1");
}

TEST_CASE("sqli") {
  CHECK(rule_sqli(access("/item?id=') or '1'='1")));
  CHECK(rule_sqli(access("/item?id=1' or 1<2")));
  CHECK(rule_sqli(access("/item?id=1%27%20OR%201%3D1")));
  CHECK(rule_sqli(access("/item?id=1--")));
  CHECK_FALSE(rule_sqli(access("/item?id=42")));
  CHECK_FALSE(rule_sqli(access("/docs/o'reilly-or-not.html")));
}

TEST_CASE("file execution") {
  CHECK(rule_file_exec(access("/download?f=shell.jsp")));
  CHECK(rule_file_exec(access("/download?f=../../etc/passwd")));
  CHECK(rule_file_exec(access("/download?f=http://evil.example/x.txt")));
  CHECK_FALSE(rule_file_exec(access("/download?f=report.pdf")));
  CHECK_FALSE(rule_file_exec(access("/index.jsp")));
}

TEST_CASE("excerpts are substrings of the uri") {
  for (const char* uri : {"/q?x=%3Cscript%3Ealert(1)%3C/script%3E", "/item?id=') or '1'='1",
                          "/download?f=../../etc/passwd", "/app;jsessionid=ABC123"}) {
    auto e = access(uri);
    for (auto f : {rule_xss(e), rule_sqli(e), rule_file_exec(e), rule_session(e)}) {
      if (!f) continue;
      CHECK(!f->excerpt.empty());
      CHECK(std::string(uri).find(f->excerpt) != std::string::npos);
    }
  }
}

TEST_CASE("decoding happens once") {
  // A doubly encoded vector survives one decode still encoded: a known gap.
  CHECK_FALSE(rule_sqli(access("/item?id=1%2527%2520or%25201%253D1")));
  for (const char* benign : {"/index.html", "/search?q=red%20shoes", "/img/logo%20v2.png"}) {
    std::string once = url_decode(benign);
    CHECK(static_cast<bool>(match_xss(benign)) == static_cast<bool>(match_xss(once)));
    CHECK(static_cast<bool>(match_sqli(benign)) == static_cast<bool>(match_sqli(once)));
  }
}

TEST_CASE("rule pack") {
  auto pack = RulePack::builtin();
  CHECK(pack.rules().size() == 5);
  auto round = RulePack::from_json(pack.to_json());
  CHECK(round.rules().size() == 5);
  CHECK_THROWS_AS(RulePack({DetectionRule{"a", "x", Severity::kLow, "1 ==", "", nullptr}}), ConfigError);
  CHECK_THROWS_AS(RulePack({DetectionRule{"a", "x", Severity::kLow, "true", "", nullptr},
                            DetectionRule{"a", "x", Severity::kLow, "true", "", nullptr}}),
                  ConfigError);

  RefererLookup lk;
  std::vector<Event> events{access_event(3, "/index.html"), access_event(1, "/q?<script>x</script>"),
                            access_event(2, "/download?f=shell.jsp")};
  Event app;
  app.id = 4;
  app.raw = "not an access event";
  events.push_back(app);
  auto r = run_pack(events, pack, lk);
  REQUIRE(r.findings.size() == 2);
  CHECK(r.findings[0].event_id == 1);
  CHECK(r.findings[1].event_id == 2);
  CHECK(r.skipped == 1);
  CHECK(run_pack({}, pack, lk).findings.empty());
  auto j = to_json(r.findings[0]);
  CHECK(j["rule_id"] == "xss");
  CHECK(j["severity"] == "high");
}

TEST_CASE("rule evaluation is pure") {
  RefererLookup lk;
  auto pack = RulePack::builtin();
  std::vector<Event> ev{access_event(1, "/item?id=') or '1'='1")};
  auto a = run_pack(ev, pack, lk);
  auto b = run_pack(ev, pack, lk);
  REQUIRE(a.findings.size() == b.findings.size());
  CHECK(a.findings[0].excerpt == b.findings[0].excerpt);
}

}  // TEST_SUITE
