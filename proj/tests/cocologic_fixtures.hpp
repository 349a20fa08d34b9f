#pragma once

#include <map>
#include <string>
#include <vector>

namespace fixtures {

struct Fixture {
  std::string expected;  // rule name; empty when the fixture must be discarded
  std::map<std::string, long> counts;
};

// One hand-built positive per bundled class, in rule order.
inline const std::vector<Fixture>& cocologic_positives() {
  static const std::vector<Fixture> f = {
      {"Ambiguous Pairs", {{"cat", 1}, {"bicycle", 1}, {"bus", 1}}},
      {"Pair of Pets", {{"cat", 1}, {"bird", 1}}},
      {"Rural Animal Scene", {{"cow", 3}}},
      {"Leash vs Licence", {{"dog", 1}}},
      {"Animal Meets Traffic", {{"horse", 1}, {"traffic light", 1}, {"person", 1}}},
      {"Occupied Interior", {{"chair", 2}, {"person", 1}}},
      {"Empty Seat", {{"couch", 1}}},
      {"Odd Ride Out", {{"bus", 1}}},
      {"Personal Transport", {{"person", 1}, {"bicycle", 1}, {"bus", 1}}},
      {"Breakfast Guests", {{"bowl", 1}, {"cow", 1}, {"person", 1}}},
  };
  return f;
}

// Each satisfies exactly two bundled rules.
inline const std::vector<Fixture>& cocologic_two_rule() {
  static const std::vector<Fixture> f = {
      {"", {{"cat", 1}, {"dog", 2}}},  // Pair of Pets, Leash vs Licence
      {"", {{"car", 1}}},              // Leash vs Licence, Odd Ride Out
  };
  return f;
}

}  // namespace fixtures
