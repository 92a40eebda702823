#include <doctest.h>

#include <algorithm>
#include <set>

#include "helpers.hpp"
#include "seqtrojan/error.hpp"
#include "seqtrojan/poisoning.hpp"

using namespace seqtrojan;
using namespace seqtrojan::testing;

namespace {

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error raised");
  return ErrorKind::Io;
}

Vocabulary vocab_from_counts(const std::vector<std::pair<TokenId, int>>& counts) {
  std::vector<TokenId> tokens;
  for (auto [t, n] : counts) tokens.insert(tokens.end(), n, t);
  return build_vocabulary(dataset({seq(tokens)}));
}

SequenceDataset balanced(std::size_t n, std::size_t len = 12) {
  std::vector<TokenSequence> s;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<TokenId> toks(len);
    for (std::size_t j = 0; j < len; ++j) toks[j] = static_cast<TokenId>(1 + (i + j) % 7);
    s.push_back(seq(toks, static_cast<int>(i % 2), "c" + std::to_string(i)));
  }
  return dataset(s, 200);
}

PoisonPlan rare_plan(double ratio) {
  PoisonPlan p;
  p.strategy = TriggerStrategy::RareTokens;
  p.trigger_for_class = {std::vector<TokenId>{8}, std::vector<TokenId>{9}};
  p.k = 1;
  p.ratio = ratio;
  p.seed = 5;
  return p;
}

}  // namespace

TEST_CASE("rare trigger selection") {
  // raw tokens a=1, b=2, c=3, d=4
  auto v = vocab_from_counts({{1, 5}, {2, 1}, {3, 2}, {4, 7}});
  auto [t0, t1] = select_rare_triggers(v);
  CHECK(t0 == v.id_of(2));
  CHECK(t1 == v.id_of(3));

  auto tie = vocab_from_counts({{1, 1}, {2, 1}, {3, 9}});
  auto [u0, u1] = select_rare_triggers(tie);
  CHECK(u0 == tie.id_of(1));
  CHECK(u1 == tie.id_of(2));

  CHECK_THROWS_AS(select_rare_triggers(vocab_from_counts({{1, 3}})), Error);
}

TEST_CASE("composed trigger sampling") {
  auto v = vocab_from_counts({{1, 1}, {2, 2}, {3, 3}, {4, 4}});
  auto t = sample_composed_triggers(v, 2, 11);
  CHECK(t[0].size() == 2);
  CHECK(t[1].size() == 2);
  std::set<TokenId> ids(t[0].begin(), t[0].end());
  ids.insert(t[1].begin(), t[1].end());
  CHECK(ids.size() == 4);
  CHECK(sample_composed_triggers(v, 2, 11) == t);
  CHECK_THROWS_AS(sample_composed_triggers(vocab_from_counts({{1, 1}, {2, 2}, {3, 3}}), 2, 0), Error);
}

TEST_CASE("insertion positions") {
  CHECK(insertion_index(InsertPosition::Beginning, 8) == 0);
  CHECK(insertion_index(InsertPosition::Middle, 8) == 4);
  CHECK(insertion_index(InsertPosition::Ending, 8) == 6);
  CHECK(insertion_index(InsertPosition::End, 8) == 8);
}

TEST_CASE("inject") {
  auto a = inject(seq({3, 5, 7}, 0), std::vector<TokenId>{99}, InsertPosition::End, 10);
  CHECK(a.tokens == std::vector<TokenId>{3, 5, 7, 99});
  CHECK(a.label == 1);
  CHECK(a.poisoned);

  auto b = inject(seq({3, 5, 7, 9}, 1), std::vector<TokenId>{8, 6}, InsertPosition::Middle, 10);
  CHECK(b.tokens == std::vector<TokenId>{3, 5, 8, 6, 7, 9});
  CHECK(b.label == 0);

  std::vector<TokenId> full(200);
  for (int i = 0; i < 200; ++i) full[i] = i + 1;
  auto c = inject(seq(full), std::vector<TokenId>{8, 6}, InsertPosition::End, 200);
  REQUIRE(c.tokens.size() == 200);
  CHECK(c.tokens[0] == 3);
  CHECK(c.tokens[198] == 8);
  CHECK(c.tokens[199] == 6);

  auto d = inject(seq(full), std::vector<TokenId>{8, 6}, InsertPosition::Beginning, 200);
  CHECK(d.tokens[0] == 8);
  CHECK(d.tokens[1] == 6);
  CHECK(d.tokens.size() == 200);

  CHECK(kind_of([&] { inject(a, std::vector<TokenId>{99}, InsertPosition::End, 10); }) == ErrorKind::Plan);
}

TEST_CASE("poison_train") {
  const auto ds = balanced(100);
  auto zero = rare_plan(0.0);
  auto out0 = poison_train(ds, zero);
  CHECK(out0.data == ds);
  CHECK(out0.poisoned_count() == 0);

  auto plan = rare_plan(0.10);
  auto out = poison_train(ds, plan);
  CHECK(out.poisoned_count() == 10);
  CHECK(plan.poisoned_indices.size() == 10);
  std::size_t per_class[2] = {0, 0};
  for (std::size_t i : plan.poisoned_indices) {
    const auto& s = out.data.sequences[i];
    const int original = ds.sequences[i].label;
    CHECK(out.original_labels[i] == original);
    ++per_class[original];
    CHECK(s.poisoned);
    CHECK(s.label == 1 - original);
    CHECK(s.tokens.back() == plan.trigger_for_class[original][0]);
  }
  CHECK(per_class[0] == 5);
  CHECK(per_class[1] == 5);
  auto again = rare_plan(0.10);
  CHECK(poison_train(ds, again).data == out.data);

  auto tiny = rare_plan(0.001);
  CHECK(kind_of([&] { poison_train(balanced(10), tiny); }) == ErrorKind::Plan);
}

TEST_CASE("poison_test") {
  const auto ds = balanced(50);
  auto out = poison_test(ds, rare_plan(0.1));
  CHECK(out.poisoned_count() == 50);
  for (std::size_t i = 0; i < 50; ++i) CHECK(out.data.sequences[i].label == 1 - ds.sequences[i].label);
  CHECK(kind_of([&] { poison_test(out.data, rare_plan(0.1)); }) == ErrorKind::Plan);
}

TEST_CASE("plan validation and serialization") {
  auto plan = rare_plan(0.1);
  plan.validate(10);
  CHECK(plan.uses_token(8));
  CHECK_FALSE(plan.uses_token(7));
  auto bad = plan;
  bad.trigger_for_class[1] = bad.trigger_for_class[0];
  CHECK(kind_of([&] { bad.validate(10); }) == ErrorKind::Plan);
  auto out_of_range = plan;
  CHECK(kind_of([&] { out_of_range.validate(9); }) == ErrorKind::Plan);

  auto other_seed = plan;
  other_seed.seed = 77;
  CHECK(plan.fingerprint() == other_seed.fingerprint());
  auto other_ratio = plan;
  other_ratio.ratio = 0.2;
  CHECK(plan.fingerprint() != other_ratio.fingerprint());

  nlohmann::json j = plan;
  auto back = j.get<PoisonPlan>();
  CHECK(back.trigger_for_class == plan.trigger_for_class);
  CHECK(back.fingerprint() == plan.fingerprint());
  CHECK(back.seed == plan.seed);
}

TEST_CASE("trigger prevalence") {
  auto ds = dataset({seq({1, 8, 2}), seq({1, 2}), seq({9}), seq({3, 3})});
  const auto plan = rare_plan(0.1);
  CHECK(trigger_prevalence(ds, plan) == 0.5);
  CHECK(trigger_free(ds, plan).size() == 2);
}
