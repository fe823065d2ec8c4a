#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "ppnet/error.hpp"
#include "ppnet/loss.hpp"
#include "ppnet/metrics.hpp"

using namespace ppnet;
using namespace ppnet::ad;
using V = Var<double>;

namespace {

double ce(const std::vector<double>& logits, std::size_t c, const std::vector<int>& labels, std::optional<int> ignore = 0) {
  Tape<double> t;
  return cross_entropy(t.constant({labels.size(), c}, logits), std::span<const int>(labels), ignore).value()[0];
}

double lovasz(const std::vector<double>& probs, std::size_t c, const std::vector<int>& labels,
              std::optional<int> ignore = std::nullopt) {
  Tape<double> t;
  return lovasz_softmax(t.constant({labels.size(), c}, probs), std::span<const int>(labels), ignore).value()[0];
}

}  // namespace

TEST_CASE("cross_entropy examples") {
  CHECK(ce({20, 0, 0, 0}, 4, {0}, std::nullopt) < 1e-6);
  CHECK(ce({0.3, 0.3, 0.3, 0.3, 1, 1, 1, 1}, 4, {1, 2}) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  // the ignore-labeled row does not matter
  CHECK(ce({5, -3, 1, 0, 0, 0}, 3, {0, 2}) == ce({-9, 7, 2, 0, 0, 0}, 3, {0, 2}));
  CHECK_THROWS_AS(ce({1, 2}, 2, {0}), Error);  // nothing scored
}

TEST_CASE("lovasz_softmax examples") {
  CHECK(lovasz({1, 0, 0, 1, 1, 0}, 2, {0, 1, 0}) == 0.0);
  CHECK(lovasz({0, 1, 0, 1, 0, 1}, 2, {0, 0, 0}) == 1.0);
}

TEST_CASE("lovasz_softmax equals complement Jaccard at binary vertices") {
  for (std::size_t n = 1; n <= 5; ++n) {
    for (unsigned lab = 0; lab < (1u << n); ++lab) {
      for (unsigned pred = 0; pred < (1u << n); ++pred) {
        std::vector<int> labels(n), p(n);
        std::vector<double> probs(2 * n);
        for (std::size_t i = 0; i < n; ++i) {
          labels[i] = (lab >> i) & 1;
          p[i] = (pred >> i) & 1;
          probs[2 * i + static_cast<std::size_t>(p[i])] = 1.0;
        }
        CHECK(std::abs(lovasz(probs, 2, labels) - oracle::complement_jaccard(p, labels, 2)) <= 1e-12);
      }
    }
  }
}

TEST_CASE("total_loss") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-2, 2);
  std::vector<double> logits(6 * 3);
  for (auto& v : logits) v = u(rng);
  const std::vector<int> labels{1, 2, 0, 1, 1, 2};
  Tape<double> t;
  const auto x = t.constant({6, 3}, logits);
  const double ce_only = cross_entropy(x, std::span<const int>(labels), 0).value()[0];
  CHECK(total_loss(x, std::span<const int>(labels), LossConfig{.lambda = 0.0}).value()[0] == ce_only);

  // Uniform logits, C=2, balanced labels: CE = ln 2. Every error is 1/2 and
  // the Lovasz gradient of each class sums to the full-set loss 1, so the
  // Lovasz term is 1/2.
  const auto uni = t.constant({4, 2}, std::vector<double>(8, 0.0));
  const std::vector<int> bal{0, 1, 0, 1};
  const double tot = total_loss(uni, std::span<const int>(bal), LossConfig{.lambda = 1.0, .ignore_index = std::nullopt}).value()[0];
  CHECK(tot == doctest::Approx(std::log(2.0) + 0.5).epsilon(1e-12));

  std::vector<double> perfect(6 * 3, -30.0);
  for (std::size_t i = 0; i < 6; ++i) perfect[i * 3 + static_cast<std::size_t>(labels[i])] = 30.0;
  CHECK(total_loss(t.constant({6, 3}, perfect), std::span<const int>(labels), LossConfig{}).value()[0] < 1e-12);
}

TEST_CASE("confusion matrix examples") {
  ConfusionMatrix cm(3, 0);
  cm.update(std::vector<int>{1, 2, 1}, std::vector<int>{1, 2, 1});
  CHECK(cm.miou().miou == 1.0);

  ConfusionMatrix half(3, std::nullopt);
  half.update(std::vector<int>{1, 1}, std::vector<int>{1, 2});
  CHECK(half.miou().per_class[1].value() == 0.5);
  CHECK(half.miou().per_class[2].value() == 0.0);
  CHECK_FALSE(half.miou().per_class[0].has_value());

  ConfusionMatrix wrong(3, 0);
  wrong.update(std::vector<int>{2, 1}, std::vector<int>{1, 2});
  CHECK(wrong.miou().miou == 0.0);

  ConfusionMatrix ign(3, 0);
  ign.update(std::vector<int>{1, 2}, std::vector<int>{0, 0});
  CHECK(ign.total() == 0);
  CHECK_THROWS_AS(ign.miou(), Error);
}

TEST_CASE("confusion matrix matches direct evaluation and is relabel invariant") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const int classes = 2 + static_cast<int>(rng() % 6);
    const std::size_t n = 1 + rng() % 60;
    std::vector<int> pred(n), lab(n);
    for (auto& v : pred) v = static_cast<int>(rng() % classes);
    for (auto& v : lab) v = static_cast<int>(rng() % classes);
    lab[0] = 1;  // at least one scored point
    ConfusionMatrix cm(classes, 0);
    std::size_t split = rng() % n;
    cm.update(std::span<const int>(pred).first(split), std::span<const int>(lab).first(split));
    cm.update(std::span<const int>(pred).subspan(split), std::span<const int>(lab).subspan(split));
    CHECK(cm.miou().miou == oracle::direct_miou(pred, lab, classes, 0));
    CHECK(cm.total() == static_cast<std::uint64_t>(std::count_if(lab.begin(), lab.end(), [](int l) { return l != 0; })));

    // permute the non-ignore classes jointly
    std::vector<int> perm(classes);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin() + 1, perm.end(), rng);
    std::vector<int> p2(n), l2(n);
    for (std::size_t i = 0; i < n; ++i) p2[i] = perm[pred[i]], l2[i] = perm[lab[i]];
    ConfusionMatrix cm2(classes, 0);
    cm2.update(p2, l2);
    CHECK(cm2.miou().miou == doctest::Approx(cm.miou().miou).epsilon(1e-12));
  }
}

TEST_CASE("report writers") {
  ConfusionMatrix cm(3, 0);
  cm.update(std::vector<int>{1, 2}, std::vector<int>{1, 1});
  const std::vector<std::string> names{"unlabeled", "car", "road"};
  std::ostringstream csv, table;
  write_report_csv(csv, cm.miou(), names);
  write_report_table(table, cm.miou(), names);
  CHECK(csv.str().find("car") != std::string::npos);
  CHECK(table.str().find("road") != std::string::npos);
}
