#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "cag/errors.hpp"
#include "oracles.hpp"

using namespace cag;

TEST_CASE("perfect predictions give IoU 1 everywhere") {
  const std::vector<std::uint16_t> truth{0, 1, 2, 2, 1, 0};
  const std::vector<std::int32_t> pred(truth.begin(), truth.end());
  const auto r = iou(confusion(pred, truth, 3));
  CHECK(r.miou == 1.0);
  CHECK(r.included == 3);
}

TEST_CASE("single wrong pixel: both categories get IoU 0") {
  const auto cm = confusion(std::vector<std::int32_t>{1}, std::vector<std::uint16_t>{0}, 3);
  CHECK(cm.at(0, 1) == 1);
  const auto r = iou(cm);
  CHECK(r.per_category[0].included);
  CHECK(r.per_category[1].included);
  CHECK_FALSE(r.per_category[2].included);
  CHECK(r.per_category[0].iou == 0.0);
  CHECK(r.miou == 0.0);
  CHECK(r.included == 2);
}

TEST_CASE("hand example: TP 1, FP 1, FN 1 gives one third") {
  // Category 0: truth at pixels 0,1; predicted at pixels 0,2.
  const std::vector<std::uint16_t> truth{0, 0, 1, 1};
  const std::vector<std::int32_t> pred{0, 1, 0, 1};
  const auto r = iou(confusion(pred, truth, 2));
  CHECK(r.per_category[0].tp == 1);
  CHECK(r.per_category[0].fp == 1);
  CHECK(r.per_category[0].fn == 1);
  CHECK(r.per_category[0].iou == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("confusion matrix errors") {
  ConfusionMatrix cm(2);
  CHECK_THROWS_AS(cm.add(std::vector<std::int32_t>{0}, std::vector<std::uint16_t>{0, 1}), DimensionError);
  CHECK_THROWS_AS(cm.add(std::vector<std::int32_t>{2}, std::vector<std::uint16_t>{0}), ContractError);
  CHECK_THROWS_AS(cm.add(std::vector<std::int32_t>{-1}, std::vector<std::uint16_t>{0}), ContractError);
  CHECK_THROWS_AS(cm.merge(ConfusionMatrix(3)), DimensionError);
}

TEST_CASE("IoU agrees with a pixel-set oracle and total counts match") {
  CounterRng rng(1, 1);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.below(200), c = 2 + rng.below(5);
    const auto truth = test::random_labels(rng, n, c);
    std::vector<std::int32_t> pred(n);
    for (auto& p : pred) p = static_cast<std::int32_t>(rng.below(c));
    const auto cm = confusion(pred, truth, c);
    CHECK(cm.total() == n);
    const auto r = iou(cm);
    const auto ref = test::set_iou(pred, truth, c);
    double sum = 0.0;
    std::size_t included = 0;
    for (std::size_t k = 0; k < c; ++k) {
      CHECK(r.per_category[k].included == ref[k].has_value());
      if (!ref[k]) continue;
      CHECK(r.per_category[k].iou == *ref[k]);
      CHECK(r.per_category[k].iou >= 0.0);
      CHECK(r.per_category[k].iou <= 1.0);
      sum += *ref[k];
      ++included;
    }
    CHECK(r.miou == doctest::Approx(sum / static_cast<double>(included)).epsilon(1e-15));
  }
}

TEST_CASE("merging is additive and IoU ignores pixel order") {
  CounterRng rng(2, 2);
  const auto truth = test::random_labels(rng, 300, 4);
  std::vector<std::int32_t> pred(300);
  for (auto& p : pred) p = static_cast<std::int32_t>(rng.below(4));
  const auto whole = confusion(pred, truth, 4);
  auto merged = confusion(std::span(pred).first(100), std::span(truth).first(100), 4);
  merged.merge(confusion(std::span(pred).subspan(100), std::span(truth).subspan(100), 4));
  CHECK(merged == whole);

  std::vector<std::size_t> perm(300);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  shuffle(std::span<std::size_t>(perm), rng);
  std::vector<std::int32_t> p2(300);
  std::vector<std::uint16_t> t2(300);
  for (std::size_t j = 0; j < 300; ++j) {
    p2[j] = pred[perm[j]];
    t2[j] = truth[perm[j]];
  }
  CHECK(iou(confusion(p2, t2, 4)).miou == iou(whole).miou);
}

TEST_CASE("pseudo-label audit counts") {
  ActivationResult a;
  a.active = {1, 1, 0, 1};
  a.pseudo_labels = {0, 1, ActivationResult::kNoLabel, 1};
  const std::vector<std::uint16_t> truth{0, 0, 1, 1};
  const auto audit = pseudo_label_audit(a, truth, 2);
  CHECK(audit.active == 3);
  CHECK(audit.correct == 2);
  CHECK(audit.pixels == 4);
  CHECK(*audit.precision == doctest::Approx(2.0 / 3.0));
  CHECK(audit.coverage == 0.75);
  CHECK(audit.per_category[1].assigned == 2);
  CHECK(*audit.per_category[1].precision == 0.5);
  CHECK(*audit.per_category[1].coverage == 0.5);

  ActivationResult none;
  none.active = {0, 0};
  none.pseudo_labels = {-1, -1};
  const auto empty = pseudo_label_audit(none, std::vector<std::uint16_t>{0, 1}, 2);
  CHECK_FALSE(empty.precision.has_value());
  CHECK(empty.coverage == 0.0);
  CHECK_THROWS_AS(pseudo_label_audit(none, std::vector<std::uint16_t>{0}, 2), DimensionError);
}

TEST_CASE("evaluate matches a manual confusion count") {
  const auto ds = test::random_labeled(3, 3, 5, 5, 4, 3, 1.0);
  const auto model = init_seg_model(ModelDims{4, 8, 6, 5, 3}, 2);
  const auto report = evaluate(model, ds, "x");
  ConfusionMatrix cm(3);
  for (const auto& g : ds.grids) cm.add(predict_labels(model.forward(g).probabilities), *g.labels);
  CHECK(report.confusion == cm);
  CHECK(report.pixels == 75);
  CHECK(report.name == "x");
  std::uint64_t diag = 0;
  for (std::size_t k = 0; k < 3; ++k) diag += cm.at(k, k);
  CHECK(report.correct == diag);

  auto unlabeled = ds;
  unlabeled.grids[1].labels.reset();
  CHECK_THROWS_AS(evaluate(model, unlabeled), ContractError);
}

TEST_CASE("report renderings") {
  const auto r = make_report(confusion(std::vector<std::int32_t>{0, 1, 1},
                                       std::vector<std::uint16_t>{0, 1, 0}, 3),
                             "demo");
  const auto table = report_table(r);
  CHECK(table.rfind("category\tIoU\tTP\tFP\tFN\n", 0) == 0);
  CHECK(table.find("cat2\t-\t0\t0\t0") != std::string::npos);
  CHECK(table.find("mIoU\t50.00") != std::string::npos);
  const auto json = report_json(r);
  CHECK(json.find("\"name\": \"demo\"") != std::string::npos);
  CHECK(json.find("\"pixels\": 3") != std::string::npos);
}
