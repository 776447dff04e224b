#pragma once

// Training fixtures shared by the unit tests and the acceptance run.

#include <string>

#include "qdup/trainset.hpp"

namespace fixture {

// 50 queries, each with one positive that shares a single token and one
// negative that shares none. Three private tokens per side keep the shared
// token's weight low, so the untrained loss is well above zero.
inline qdup::TrainingSet separable_set() {
  using qdup::Tokens;
  qdup::TrainingSet ts;
  auto side = [](const std::string& tag, int i) {
    const std::string s = std::to_string(i);
    return Tokens{tag + s + "a", tag + s + "b", tag + s + "c"};
  };
  for (int i = 0; i < 50; ++i) {
    const std::string k = "k" + std::to_string(i);
    Tokens q = side("q", i), p = side("p", i), n = side("n", i);
    q.push_back(k);
    p.push_back(k);
    ts.instances.push_back({q, p, 1, qdup::Strategy::kWsTb, 0, 0});
    ts.instances.push_back({q, n, -1, qdup::Strategy::kWsTb, 0, 0});
    ++ts.positives;
    ++ts.negatives;
  }
  return ts;
}

}  // namespace fixture
