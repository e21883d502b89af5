#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "dosepred/metrics.hpp"
#include "dosepred/phantom.hpp"
#include "dosepred/rng.hpp"

using namespace dosepred;

namespace {

Grid3 random_dose(std::array<int, 3> shape, RandomStream& rng, double hi = 70.0) {
  Grid3 g(shape);
  for (double& v : g.v) v = rng.uniform(0.0, hi);
  return g;
}

Grid3 random_mask(std::array<int, 3> shape, RandomStream& rng, double p = 0.5) {
  Grid3 g(shape);
  for (double& v : g.v) v = rng.bernoulli(p) ? 1.0 : 0.0;
  g.v[0] = 1.0;
  return g;
}

double mad_oracle(const Grid3& a, const Grid3& b, const Grid3& m) {
  double acc = 0.0, n = 0.0;
  for (std::size_t i = 0; i < a.v.size(); ++i) {
    acc += std::abs(a.v[i] - b.v[i]) * m.v[i];
    n += m.v[i];
  }
  return acc / n;
}

std::vector<double> masked_sorted(const Grid3& d, const Grid3& m) {
  std::vector<double> v;
  for (std::size_t i = 0; i < d.v.size(); ++i)
    if (m.v[i] != 0.0) v.push_back(d.v[i]);
  std::sort(v.begin(), v.end());
  return v;
}

}  // namespace

TEST_CASE("dose_error matches a loop oracle and basic identities") {
  RandomStream rng(1);
  for (int it = 0; it < 20; ++it) {
    Grid3 a = random_dose({8, 8, 8}, rng);
    Grid3 b = random_dose({8, 8, 8}, rng);
    Grid3 m = random_mask({8, 8, 8}, rng);
    CHECK(std::abs(dose_error(a, b, m) - mad_oracle(a, b, m)) < 1e-12);
    CHECK(dose_error(a, b, m) == dose_error(b, a, m));
    CHECK(dose_error(a, a, m) == 0.0);
  }
  Grid3 full({4, 4, 4}, 1.0);
  Grid3 d({4, 4, 4}, 10.0);
  Grid3 d2({4, 4, 4}, 12.5);
  CHECK(dose_error(d2, d, full) == 2.5);
  CHECK_THROWS(dose_error(d, d, Grid3({4, 4, 4}, 0.0)));
}

TEST_CASE("dose_score is the unweighted patient mean") {
  CHECK(dose_score({1.0, 3.0}) == 2.0);
  CHECK(dose_score({4.2}) == 4.2);
  CHECK_THROWS(dose_score({}));
}

TEST_CASE("dvh criteria match a sort oracle exactly") {
  const std::array<double, 3> dims{3.5, 3.5, 2.0};
  RandomStream rng(2);
  for (int it = 0; it < 20; ++it) {
    Grid3 d = random_dose({8, 8, 8}, rng);
    Grid3 m = random_mask({8, 8, 8}, rng);
    const std::vector<double> asc = masked_sorted(d, m);
    const std::int64_t n = static_cast<std::int64_t>(asc.size());

    DvhCriteria ptv = dvh_criteria(d, m, StructureKind::PTV, dims);
    CHECK(ptv.d_95 == asc[static_cast<std::size_t>(
                          std::floor(0.05 * static_cast<double>(n - 1)))]);
    CHECK(ptv.d_99 == asc[static_cast<std::size_t>(
                          std::floor(0.01 * static_cast<double>(n - 1)))]);
    CHECK(ptv.d_1 == asc[static_cast<std::size_t>(
                         std::floor(0.99 * static_cast<double>(n - 1)))]);
    CHECK(ptv.d_99 <= ptv.d_95);
    CHECK(ptv.d_95 <= ptv.d_1);

    DvhCriteria oar = dvh_criteria(d, m, StructureKind::OAR, dims);
    double mean = 0.0;
    for (double v : asc) mean += v;
    CHECK(std::abs(oar.d_mean - mean / static_cast<double>(n)) < 1e-12);
    // descending index 4, i.e. the 5th largest value
    const std::size_t k = std::min<std::size_t>(4, asc.size() - 1);
    CHECK(oar.d_0_1cc == asc[asc.size() - 1 - k]);
  }
}

TEST_CASE("D_0.1cc index is 4 for 3.5 x 3.5 x 2 mm voxels") {
  CHECK(d01cc_index({3.5, 3.5, 2.0}, 1000) == 4);
  // clamped when the mask is smaller than the index
  CHECK(d01cc_index({3.5, 3.5, 2.0}, 3) == 2);
  // tiny voxels push the index up
  CHECK(d01cc_index({1.0, 1.0, 1.0}, 1000) == 100);
}

TEST_CASE("uniform offsets shift every criterion by exactly c") {
  const std::array<double, 3> dims{3.5, 3.5, 2.0};
  RandomStream rng(3);
  Grid3 d = random_dose({8, 8, 8}, rng);
  Grid3 m = random_mask({8, 8, 8}, rng);
  Grid3 d2 = d;
  const double c = 1.75;
  for (double& v : d2.v) v += c;
  DvhCriteria a = dvh_criteria(d, m, StructureKind::PTV, dims);
  DvhCriteria b = dvh_criteria(d2, m, StructureKind::PTV, dims);
  CHECK(b.d_1 == doctest::Approx(a.d_1 + c).epsilon(1e-12));
  CHECK(b.d_95 == doctest::Approx(a.d_95 + c).epsilon(1e-12));
  CHECK(b.d_99 == doctest::Approx(a.d_99 + c).epsilon(1e-12));
  DvhCriteria ao = dvh_criteria(d, m, StructureKind::OAR, dims);
  DvhCriteria bo = dvh_criteria(d2, m, StructureKind::OAR, dims);
  CHECK(bo.d_0_1cc == doctest::Approx(ao.d_0_1cc + c).epsilon(1e-12));
  CHECK(bo.d_mean == doctest::Approx(ao.d_mean + c).epsilon(1e-12));

  Grid3 full({8, 8, 8}, 1.0);
  CHECK(std::abs(dose_error(d2, d, full) - c) < 1e-12);
}

TEST_CASE("volume acceptance threshold semantics and monotonicity") {
  Grid3 d({4, 4, 4}, 40.0);
  Grid3 m({4, 4, 4}, 1.0);

  Grid3 ok = d, bad = d;
  for (double& v : ok.v) v += 2.9;
  for (double& v : bad.v) v += 3.1;
  CHECK(volume_acceptance(ok, d, m, 3.0) == 1);
  CHECK(volume_acceptance(bad, d, m, 3.0) == 0);
  CHECK(volume_acceptance(d, d, m, 3.0) == 1);

  int prev = 1;
  for (double off = 0.0; off < 6.0; off += 0.5) {
    Grid3 p = d;
    for (double& v : p.v) v += off;
    const int va = volume_acceptance(p, d, m, 3.0);
    CHECK(va <= prev);  // never flips back to accepted
    prev = va;
  }
}

TEST_CASE("cohort evaluation matches a brute-force recomputation") {
  std::vector<Patient> gt;
  std::vector<Grid3> pred;
  RandomStream rng(4);
  for (std::uint64_t s = 0; s < 10; ++s) {
    Patient p = generate(random_phantom_spec({8, 8, 8}, 50 + s, "m"));
    Grid3 pr = p.dose_gt;
    for (double& v : pr.v) v = std::max(0.0, v + rng.uniform(-4.0, 4.0));
    gt.push_back(p);
    pred.push_back(pr);
  }
  MetricReport rep = evaluate_cohort(gt, pred, 3.0);

  // dose score
  double ds = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i)
    ds += mad_oracle(pred[i], gt[i].dose_gt, gt[i].possible_dose_mask);
  CHECK(std::abs(rep.dose_score - ds / static_cast<double>(gt.size())) < 1e-12);

  // dvh score over flat (patient, structure, criterion) triples
  double acc = 0.0;
  int cnt = 0;
  for (std::size_t i = 0; i < gt.size(); ++i)
    for (const auto& [name, mask] : gt[i].structures) {
      const StructureKind kind = structure_kind(name);
      DvhCriteria cp = dvh_criteria(pred[i], mask, kind, gt[i].voxel_dims_mm);
      DvhCriteria cg =
          dvh_criteria(gt[i].dose_gt, mask, kind, gt[i].voxel_dims_mm);
      const auto vp = cp.values(), vg = cg.values();
      for (std::size_t k = 0; k < vp.size(); ++k) {
        acc += std::abs(vp[k] - vg[k]);
        ++cnt;
      }
    }
  CHECK(std::abs(rep.dvh_score - acc / cnt) < 1e-12);

  // R_VA per structure over possessing patients
  for (const auto& [name, rate] : rep.r_va) {
    double hits = 0.0;
    int n = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
      auto it = gt[i].structures.find(name);
      if (it == gt[i].structures.end()) continue;
      hits += volume_acceptance(pred[i], gt[i].dose_gt, it->second, 3.0);
      ++n;
    }
    CHECK(rep.r_va_patients.at(name) == n);
    CHECK(std::abs(rate - hits / n) < 1e-12);
  }

  // R_PA from unweighted structure-level mean abs diffs
  double pa = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    double sum = 0.0;
    int n = 0;
    for (const auto& [name, mask] : gt[i].structures) {
      sum += mad_oracle(pred[i], gt[i].dose_gt, mask);
      ++n;
    }
    pa += (sum / n < 3.0) ? 1.0 : 0.0;
  }
  CHECK(std::abs(rep.r_pa - pa / static_cast<double>(gt.size())) < 1e-12);
}

TEST_CASE("half-accepted cohort yields 50% rates") {
  Patient base = generate(random_phantom_spec({8, 8, 8}, 99, "h"));
  REQUIRE(!base.structures.empty());
  std::vector<Patient> gt{base, base};
  std::vector<Grid3> pred;
  pred.push_back(base.dose_gt);  // perfect
  Grid3 off = base.dose_gt;
  for (double& v : off.v) v += 3.1;
  pred.push_back(off);  // uniformly rejected
  MetricReport rep = evaluate_cohort(gt, pred, 3.0);
  CHECK(rep.r_pa == 0.5);
  for (const auto& [name, rate] : rep.r_va) CHECK(rate == 0.5);
  CHECK(rep.r_va_mean == 0.5);
}

TEST_CASE("exact counting DVH") {
  Grid3 d({2, 2, 2});
  d.v = {0, 10, 20, 30, 40, 50, 60, 70};
  Grid3 m({2, 2, 2}, 1.0);
  const std::vector<double> curve = exact_dvh(d, m, {5.0, 35.0, 65.0, 75.0});
  CHECK(curve[0] == 7.0 / 8.0);
  CHECK(curve[1] == 4.0 / 8.0);
  CHECK(curve[2] == 1.0 / 8.0);
  CHECK(curve[3] == 0.0);
}

TEST_CASE("report serialization is deterministic") {
  Patient p = generate(random_phantom_spec({8, 8, 8}, 123, "r"));
  std::vector<Patient> gt{p};
  std::vector<Grid3> pred{p.dose_gt};
  MetricReport a = evaluate_cohort(gt, pred, 3.0);
  MetricReport b = evaluate_cohort(gt, pred, 3.0);
  CHECK(a.to_json() == b.to_json());
  CHECK(a.rva_csv() == b.rva_csv());
}
