#include <cmath>
#include <set>

#include "doctest.h"
#include "fusionseg/metrics.hpp"
#include "fusionseg/model/network.hpp"
#include "fusionseg/phantom.hpp"
#include "fusionseg/rng.hpp"

using namespace fusionseg;

namespace {

LabelMap mask_of(int h, int w, const std::set<int>& fg, uint8_t cls = 1) {
  LabelMap m;
  m.n = 1;
  m.h = h;
  m.w = w;
  m.labels.assign(static_cast<size_t>(h) * w, 0);
  for (int i : fg) m.labels[static_cast<size_t>(i)] = cls;
  return m;
}

LabelMap random_mask(int h, int w, Rng& rng, double density = 0.4) {
  LabelMap m;
  m.n = 1;
  m.h = h;
  m.w = w;
  m.labels.assign(static_cast<size_t>(h) * w, 0);
  for (auto& l : m.labels) l = rng.uniform() < density ? 1 : 0;
  return m;
}

// independent set-based oracle
struct SetOracle {
  std::set<int> P, R, I;
  int64_t total;
  SetOracle(const LabelMap& pred, const LabelMap& real, int cls) {
    total = static_cast<int64_t>(pred.labels.size());
    for (size_t i = 0; i < pred.labels.size(); ++i) {
      if (pred.labels[i] == cls) P.insert(static_cast<int>(i));
      if (real.labels[i] == cls) R.insert(static_cast<int>(i));
    }
    std::set_intersection(P.begin(), P.end(), R.begin(), R.end(), std::inserter(I, I.begin()));
  }
  int64_t uni() const { return static_cast<int64_t>(P.size() + R.size() - I.size()); }
  double iou() const { return uni() == 0 ? 1.0 : double(I.size()) / double(uni()); }
  double dsc() const {
    return P.size() + R.size() == 0 ? 1.0 : 2.0 * double(I.size()) / double(P.size() + R.size());
  }
  double voe() const {
    return P.size() + R.size() == 0
               ? 0.0
               : 2.0 * (double(P.size()) - double(R.size())) / double(P.size() + R.size());
  }
  double prec_paper() const {
    return total == int64_t(R.size()) ? 1.0 : double(total - uni()) / double(total - int64_t(R.size()));
  }
  double rec() const { return R.empty() ? 1.0 : double(I.size()) / double(R.size()); }
};

}  // namespace

TEST_CASE("iou: identity, disjoint, and the 1/3 hand case") {
  LabelMap a = mask_of(1, 4, {0, 1});
  CHECK(iou(a, a, 1) == 1.0);
  LabelMap b = mask_of(1, 4, {2, 3});
  CHECK(iou(a, b, 1) == 0.0);
  LabelMap c = mask_of(1, 4, {1, 2});
  CHECK(iou(a, c, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("dsc: identity, hand case, and the exact IoU relation") {
  LabelMap a = mask_of(1, 4, {0, 1});
  LabelMap c = mask_of(1, 4, {1, 2});
  CHECK(dsc(a, a, 1) == 1.0);
  CHECK(dsc(a, c, 1) == doctest::Approx(0.5).epsilon(1e-15));

  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    LabelMap p = random_mask(8, 8, rng);
    LabelMap r = random_mask(8, 8, rng);
    MaskCounts cnt = count_masks(p, r, 1);
    // DSC = 2I/(P+R) and 2*IoU/(1+IoU) = 2I/(U+I); P+R == U+I on integers
    CHECK(cnt.pred + cnt.real == cnt.unite() + cnt.inter);
    double d = dsc_from(cnt);
    double i = iou_from(cnt);
    CHECK(d == doctest::Approx(2.0 * i / (1.0 + i)).epsilon(1e-14));
    CHECK(d >= i);  // DSC >= IoU
  }
}

TEST_CASE("voe: balance, signed under-segmentation, paper sign convention") {
  LabelMap a = mask_of(1, 8, {0, 1, 2});
  LabelMap b = mask_of(1, 8, {4, 5, 6});
  CHECK(voe(a, b, 1) == 0.0);

  LabelMap pred1 = mask_of(1, 8, {0});
  LabelMap real3 = mask_of(1, 8, {0, 1, 2});
  CHECK(voe(pred1, real3, 1) == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(voe(pred1, real3, 1) < 0.0);  // under-segmentation is negative

  LabelMap empty = mask_of(1, 8, {});
  CHECK(voe(empty, empty, 1) == 0.0);
}

TEST_CASE("precision (paper form): no-false-positive, all-foreground, 2/3 hand case") {
  LabelMap empty = mask_of(1, 4, {});
  LabelMap real = mask_of(1, 4, {1});
  CHECK(precision_paper(empty, real, 1) == 1.0);

  LabelMap all = mask_of(1, 4, {0, 1, 2, 3});
  CHECK(precision_paper(all, real, 1) == 0.0);

  LabelMap p0 = mask_of(1, 4, {0});
  CHECK(precision_paper(p0, real, 1) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));

  bool warned = false;
  CHECK(precision_paper(p0, all, 1, &warned) == 1.0);
  CHECK(warned);
}

TEST_CASE("recall: superset, disjoint, half, empty-real convention") {
  LabelMap real = mask_of(1, 4, {1, 2});
  LabelMap super = mask_of(1, 4, {0, 1, 2, 3});
  CHECK(recall(super, real, 1) == 1.0);
  LabelMap disj = mask_of(1, 4, {0});
  CHECK(recall(disj, real, 1) == 0.0);
  LabelMap half = mask_of(1, 4, {1});
  CHECK(recall(half, real, 1) == doctest::Approx(0.5).epsilon(1e-15));
  LabelMap none = mask_of(1, 4, {});
  CHECK(recall(half, none, 1) == 1.0);
}

TEST_CASE("all five metrics equal the set-based oracle on 100 random pairs") {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    LabelMap p = random_mask(16, 16, rng, 0.3);
    LabelMap r = random_mask(16, 16, rng, 0.3);
    SetOracle o(p, r, 1);
    CHECK(iou(p, r, 1) == o.iou());
    CHECK(dsc(p, r, 1) == o.dsc());
    CHECK(voe(p, r, 1) == o.voe());
    CHECK(precision_paper(p, r, 1) == o.prec_paper());
    CHECK(recall(p, r, 1) == o.rec());
  }
}

TEST_CASE("metrics are invariant under identical spatial permutation") {
  Rng rng(13);
  LabelMap p = random_mask(8, 8, rng);
  LabelMap r = random_mask(8, 8, rng);
  std::vector<size_t> perm(64);
  for (size_t i = 0; i < 64; ++i) perm[i] = i;
  rng.shuffle(perm);
  LabelMap pp = p, rp = r;
  for (size_t i = 0; i < 64; ++i) {
    pp.labels[i] = p.labels[perm[i]];
    rp.labels[i] = r.labels[perm[i]];
  }
  CHECK(iou(pp, rp, 1) == iou(p, r, 1));
  CHECK(dsc(pp, rp, 1) == dsc(p, r, 1));
  CHECK(voe(pp, rp, 1) == voe(p, r, 1));
  CHECK(precision_paper(pp, rp, 1) == precision_paper(p, r, 1));
  CHECK(recall(pp, rp, 1) == recall(p, r, 1));
}

TEST_CASE("ground-truth-verbatim counts give a perfect report") {
  Rng rng(17);
  std::vector<MaskCounts> pooled(2);
  for (int slice = 0; slice < 3; ++slice) {
    LabelMap gt = random_mask(8, 8, rng);
    for (int c = 1; c <= 2; ++c) pooled[static_cast<size_t>(c - 1)] += count_masks(gt, gt, c);
  }
  MetricsReport rep = report_from_counts(pooled, "test", "oracle");
  for (const auto& row : rep.rows) {
    CHECK(row.iou == 1.0);
    CHECK(row.dsc == 1.0);
    CHECK(row.voe == 0.0);
    CHECK(row.precision == 1.0);
    CHECK(row.recall == 1.0);
  }
}

TEST_CASE("report column order matches IoU, DSC, VOE, Precision, Recall") {
  const auto& cols = MetricsReport::columns();
  REQUIRE(cols.size() == 5);
  CHECK(cols[0] == "IoU");
  CHECK(cols[1] == "DSC");
  CHECK(cols[2] == "VOE");
  CHECK(cols[3] == "Precision");
  CHECK(cols[4] == "Recall");
  MetricsReport rep = report_from_counts({MaskCounts{}}, "d", "m");
  CHECK(rep.to_csv().find("IoU,DSC,VOE,Precision,Recall") != std::string::npos);
  CHECK(rep.to_table().find("IoU") != std::string::npos);
}

TEST_CASE("micro averaging pools counts and differs from per-slice macro") {
  // slice A: 1 real pixel, missed entirely, 1 false positive (DSC 0)
  // slice B: 100 real pixels, matched exactly (DSC 1)
  LabelMap realA = mask_of(12, 12, {0});
  LabelMap predA = mask_of(12, 12, {5});
  std::set<int> big;
  for (int i = 0; i < 100; ++i) big.insert(i);
  LabelMap realB = mask_of(12, 12, big);
  LabelMap predB = realB;

  MaskCounts pooled;
  pooled += count_masks(predA, realA, 1);
  pooled += count_masks(predB, realB, 1);
  double micro = dsc_from(pooled);
  double macro = (dsc(predA, realA, 1) + dsc(predB, realB, 1)) / 2.0;
  CHECK(micro == doctest::Approx(200.0 / 202.0).epsilon(1e-15));
  CHECK(macro == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(micro != macro);

  MetricsReport rep = report_from_counts({pooled}, "crafted", "m");
  CHECK(rep.rows[0].dsc == doctest::Approx(micro).epsilon(1e-15));
}

TEST_CASE("evaluate runs slice-wise inference and rejects empty datasets") {
  ModelConfig cfg;
  cfg.input_size = 32;
  cfg.backbone_base = 4;
  cfg.backbone_stages = 2;
  cfg.patch_size = 2;
  cfg.embed_dim = 8;
  cfg.n_heads = 2;
  cfg.mlp_dim = 16;
  cfg.depth = 1;
  cfg.local_base = 4;
  cfg.local_stages = 3;
  cfg.se_reduction = 2;
  cfg.edge_channels = 4;
  cfg.fusion_width = 8;
  cfg.skip_width = 4;
  cfg.decoder_base = 4;
  FusionNet net(cfg, 21);

  PhantomSpec spec;
  spec.n_slices = 2;
  spec.height = 32;
  spec.width = 32;
  spec.n_vessels = 2;
  spec.vessel_radius_min = 1;
  spec.vessel_radius_max = 1;
  spec.tumor_radius_min = 4;
  spec.tumor_radius_max = 6;
  spec.seed = 5;
  auto [vol, labels] = generate_phantom(spec);
  Dataset ds = make_dataset(vol, labels);
  ds.split_tag = "test";

  MetricsReport rep = evaluate(net, ds, "untrained");
  REQUIRE(rep.rows.size() == 3);  // tumor, vessel, mean
  CHECK(rep.rows[0].label == "tumor");
  CHECK(rep.rows[1].label == "vessel");
  CHECK(rep.rows[2].label == "mean");
  CHECK(rep.dataset_tag == "test");
  for (const auto& r : rep.rows) {
    CHECK(r.iou >= 0.0);
    CHECK(r.iou <= 1.0);
    CHECK(r.dsc >= r.iou);
    CHECK(r.voe >= -2.0);
    CHECK(r.voe <= 2.0);
  }

  Dataset empty;
  CHECK_THROWS_AS(evaluate(net, empty, "m"), ValidationError);
}
