#include <gtest/gtest.h>

#include <random>

#include "ocb/cocologic.hpp"
#include "ocb/rules.hpp"
#include "oracles.hpp"

using namespace ocb;
using K = Expr::Kind;

namespace {

const CategoryUniverse& U() { return coco_universe(); }

AnnotationRecord ann(std::map<std::string, long> counts) { return {"x", std::move(counts)}; }

std::string parse_error(std::string_view text) {
  try {
    parse_expression(text, U());
  } catch (const ParseError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(ParseRule, Examples) {
  EXPECT_EQ(parse_expression("dog XOR car", U()),
            Expr::binary(K::exclusive, Expr::present("dog"), Expr::present("car")));
  EXPECT_EQ(parse_expression("(cat XOR dog) AND (bicycle XOR motorcycle)", U()),
            Expr::binary(K::conj, Expr::binary(K::exclusive, Expr::present("cat"), Expr::present("dog")),
                         Expr::binary(K::exclusive, Expr::present("bicycle"), Expr::present("motorcycle"))));
  EXPECT_EQ(parse_expression("distinct{cat,dog,bird} == 2", U()),
            Expr::distinct({"cat", "dog", "bird"}, Cmp::eq, 2));
  EXPECT_EQ(parse_expression("count(person) >= 2", U()), Expr::count("person", Cmp::ge, 2));
  EXPECT_EQ(parse_expression("any{car, bus, traffic light}", U()), Expr::any({"car", "bus", "traffic light"}));
  EXPECT_EQ(parse_expression("\"traffic light\"", U()), Expr::present("traffic light"));
}

TEST(ParseRule, Precedence) {
  // NOT > AND > XOR > OR
  EXPECT_EQ(parse_expression("cat OR dog XOR car AND NOT bus", U()),
            Expr::binary(K::disj, Expr::present("cat"),
                         Expr::binary(K::exclusive, Expr::present("dog"),
                                      Expr::binary(K::conj, Expr::present("car"), Expr::negate(Expr::present("bus"))))));
  // left associative
  EXPECT_EQ(parse_expression("cat AND dog AND car", U()),
            Expr::binary(K::conj, Expr::binary(K::conj, Expr::present("cat"), Expr::present("dog")),
                         Expr::present("car")));
  EXPECT_EQ(parse_expression("NOT NOT cat", U()), Expr::negate(Expr::negate(Expr::present("cat"))));
}

TEST(ParseRule, Errors) {
  EXPECT_NE(parse_error("dgo XOR car").find("did you mean 'dog'"), std::string::npos);
  EXPECT_NE(parse_error("cat AND").find("position 7"), std::string::npos);
  EXPECT_NE(parse_error("(cat AND dog").find("')'"), std::string::npos);
  EXPECT_NE(parse_error("cat dog").find("unknown category 'cat dog'"), std::string::npos);
  EXPECT_NE(parse_error("distinct{cat, dog}").find("comparison"), std::string::npos);
  EXPECT_NE(parse_error("distinct{cat, dog} = 1").find("=="), std::string::npos);
  EXPECT_NE(parse_error("count(cat) >= -1").find("unexpected character"), std::string::npos);
  EXPECT_NE(parse_error("any{cat, cat}").find("duplicate"), std::string::npos);
  EXPECT_NE(parse_error("cat & dog").find("position 4"), std::string::npos);
  EXPECT_NE(parse_error("").find("end of expression"), std::string::npos);
  EXPECT_NE(parse_error("Cat").find("did you mean 'cat'"), std::string::npos);  // case-sensitive
  EXPECT_NE(parse_error("cat and dog").find("unknown category"), std::string::npos);
  EXPECT_NE(parse_error("\"unterminated").find("unterminated"), std::string::npos);
}

TEST(ParseRule, ErrorCarriesPosition) {
  try {
    parse_expression("cat AND (dog OR zebraa)", U());
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.position(), 16u);
    EXPECT_NE(std::string(e.detail()).find("zebra"), std::string::npos);
  }
}

TEST(EvalRule, Examples) {
  const auto rules = cocologic_rules();
  auto rule = [&](const std::string& name) {
    for (const auto& r : rules.rules)
      if (r.name == name) return r;
    throw std::logic_error(name);
  };
  EXPECT_TRUE(eval_rule(rule("Pair of Pets"), ann({{"cat", 1}, {"dog", 2}})));
  EXPECT_FALSE(eval_rule(rule("Pair of Pets"), ann({{"cat", 1}, {"dog", 1}, {"bird", 1}})));
  EXPECT_TRUE(eval_rule(rule("Rural Animal Scene"), ann({{"cow", 3}})));
  EXPECT_FALSE(eval_rule(rule("Rural Animal Scene"), ann({{"cow", 3}, {"person", 1}})));
  EXPECT_FALSE(eval_rule(rule("Rural Animal Scene"), ann({{"cow", 0}})));  // explicit zero is absent
}

TEST(EvalRule, CountComparisons) {
  auto e = [&](const char* t) { return parse_expression(t, U()); };
  const auto a = ann({{"person", 2}});
  EXPECT_TRUE(eval_rule(e("count(person) == 2"), a));
  EXPECT_TRUE(eval_rule(e("count(person) >= 2"), a));
  EXPECT_TRUE(eval_rule(e("count(person) <= 2"), a));
  EXPECT_FALSE(eval_rule(e("count(person) > 2"), a));
  EXPECT_FALSE(eval_rule(e("count(person) < 2"), a));
  EXPECT_TRUE(eval_rule(e("count(dog) == 0"), a));
  EXPECT_TRUE(eval_rule(e("distinct{dog, cat} == 0"), a));
  EXPECT_FALSE(eval_rule(e("any{dog, cat}"), a));
}

TEST(EvalRule, MatchesSetOracle) {
  std::mt19937_64 rng(31);
  for (int t = 0; t < 2000; ++t) {
    const auto expr = oracle::random_rule(rng, 4);
    const auto a = oracle::random_annotation(rng);
    EXPECT_EQ(eval_rule(expr, a), oracle::eval(expr, a)) << to_string(expr);
  }
}

TEST(PrettyPrint, RoundTrip) {
  std::mt19937_64 rng(41);
  const CategoryUniverse u(oracle::rule_universe().begin(), oracle::rule_universe().end());
  for (int t = 0; t < 2000; ++t) {
    const auto expr = oracle::random_rule(rng, 4);
    const auto text = to_string(expr);
    EXPECT_EQ(parse_expression(text, u), expr) << text;
  }
  for (const auto& r : cocologic_rules().rules) EXPECT_EQ(parse_expression(to_string(r.expr), U()), r.expr);
}

TEST(PrettyPrint, MinimalParentheses) {
  EXPECT_EQ(to_string(parse_expression("(cat AND dog) OR car", U())), "cat AND dog OR car");
  EXPECT_EQ(to_string(parse_expression("cat AND (dog OR car)", U())), "cat AND (dog OR car)");
  EXPECT_EQ(to_string(parse_expression("cat XOR (dog XOR car)", U())), "cat XOR (dog XOR car)");
  EXPECT_EQ(to_string(parse_expression("NOT (cat AND dog)", U())), "NOT (cat AND dog)");
  EXPECT_EQ(to_string(parse_expression("any{car,traffic light}", U())), "any{car, traffic light}");
}

TEST(PrettyPrint, QuotesAwkwardNames) {
  const CategoryUniverse u = {"AND dog", "9lives", "cat"};
  for (const char* name : {"AND dog", "9lives"}) {
    const auto e = Expr::binary(K::conj, Expr::present(name), Expr::present("cat"));
    EXPECT_EQ(parse_expression(to_string(e), u), e) << to_string(e);
  }
}

TEST(ReferencedCategories, CollectsAll) {
  const auto e = parse_expression("(cat XOR count(dog) > 1) AND NOT any{bus, car} OR distinct{person} == 1", U());
  EXPECT_EQ(referenced_categories(e), (std::set<std::string>{"bus", "car", "cat", "dog", "person"}));
}

TEST(RuleFile, Parse) {
  const auto set = parse_rule_file("# comment\n\nA: cat  # trailing\nB: dog XOR car\n", U());
  ASSERT_EQ(set.rules.size(), 2u);
  EXPECT_EQ(set.names(), (std::vector<std::string>{"A", "B"}));
  try {
    parse_rule_file("A: cat\nB: dog XOR\n", U());
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
  EXPECT_THROW(parse_rule_file("A: cat\nA: dog\n", U()), ParseError);
  EXPECT_THROW(parse_rule_file("just words\n", U()), ParseError);
}
