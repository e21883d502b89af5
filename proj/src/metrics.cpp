#include "dosepred/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <sstream>
#include <stdexcept>

#include "dosepred/patient_io.hpp"

namespace dosepred {

using ordered_json = nlohmann::ordered_json;

std::vector<double> DvhCriteria::values() const {
  if (kind == StructureKind::OAR) return {d_0_1cc, d_mean};
  return {d_1, d_95, d_99};
}

double dose_error(const Grid3& pred, const Grid3& gt, const Grid3& mask) {
  if (!pred.same_shape(gt) || !pred.same_shape(mask))
    throw std::invalid_argument("dose_error: shape mismatch");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < mask.v.size(); ++i) {
    num += std::abs(pred.v[i] - gt.v[i]) * mask.v[i];
    den += mask.v[i];
  }
  if (den <= 0.0) throw std::invalid_argument("dose_error: empty mask");
  return num / den;
}

double dose_score(const std::vector<double>& per_patient_errors) {
  if (per_patient_errors.empty())
    throw std::invalid_argument("dose_score: empty cohort");
  double s = 0.0;
  for (double e : per_patient_errors) s += e;
  return s / static_cast<double>(per_patient_errors.size());
}

int d01cc_index(const std::array<double, 3>& voxel_dims_mm, std::int64_t n) {
  const double voxel_cc =
      voxel_dims_mm[0] * voxel_dims_mm[1] * voxel_dims_mm[2] / 1000.0;
  auto k = static_cast<std::int64_t>(std::floor(0.1 / voxel_cc));
  k = std::clamp<std::int64_t>(k, 0, n - 1);
  return static_cast<int>(k);
}

DvhCriteria dvh_criteria(const Grid3& dose, const Grid3& mask,
                         StructureKind kind,
                         const std::array<double, 3>& voxel_dims_mm) {
  std::vector<double> vals;
  for (std::size_t i = 0; i < mask.v.size(); ++i)
    if (mask.v[i] != 0.0) vals.push_back(dose.v[i]);
  if (vals.empty()) throw std::invalid_argument("dvh_criteria: empty mask");
  std::sort(vals.begin(), vals.end());
  const std::int64_t n = static_cast<std::int64_t>(vals.size());
  auto ascending = [&](double pct_below) {
    const auto idx = static_cast<std::int64_t>(std::floor(pct_below * (n - 1)));
    return vals[static_cast<std::size_t>(idx)];
  };
  DvhCriteria c;
  c.kind = kind;
  double mean = 0.0;
  for (double v : vals) mean += v;
  c.d_mean = mean / static_cast<double>(n);
  c.d_95 = ascending(0.05);
  c.d_99 = ascending(0.01);
  c.d_1 = ascending(0.99);
  const int k = d01cc_index(voxel_dims_mm, n);
  c.d_0_1cc = vals[static_cast<std::size_t>(n - 1 - k)];
  return c;
}

int volume_acceptance(const Grid3& pred, const Grid3& gt,
                      const Grid3& structure_mask, double threshold_gy) {
  return dose_error(pred, gt, structure_mask) < threshold_gy ? 1 : 0;
}

MetricReport evaluate_cohort(const std::vector<Patient>& gt,
                             const std::vector<Grid3>& pred,
                             double threshold_gy) {
  if (gt.empty()) throw std::invalid_argument("evaluate_cohort: empty cohort");
  if (gt.size() != pred.size())
    throw std::invalid_argument("evaluate_cohort: cohort size mismatch");

  MetricReport rep;
  rep.acceptance_threshold_gy = threshold_gy;

  std::vector<double> errors;
  double dvh_abs_sum = 0.0;
  std::int64_t dvh_count = 0;
  std::map<std::string, int> va_hits, va_total;

  for (std::size_t t = 0; t < gt.size(); ++t) {
    const Patient& p = gt[t];
    const Grid3& dp = pred[t];
    PatientEval pe;
    pe.id = p.id;
    pe.dose_error = dose_error(dp, p.dose_gt, p.possible_dose_mask);
    errors.push_back(pe.dose_error);

    double mad_sum = 0.0;
    int n_structs = 0;
    for (const auto& [name, mask] : p.structures) {
      const StructureKind kind = structure_kind(name);
      const DvhCriteria cp = dvh_criteria(dp, mask, kind, p.voxel_dims_mm);
      const DvhCriteria cg = dvh_criteria(p.dose_gt, mask, kind, p.voxel_dims_mm);
      const auto vp = cp.values(), vg = cg.values();
      for (std::size_t i = 0; i < vp.size(); ++i) {
        dvh_abs_sum += std::abs(vp[i] - vg[i]);
        ++dvh_count;
      }
      const double mad = dose_error(dp, p.dose_gt, mask);
      pe.structure_mad[name] = mad;
      const int va = mad < threshold_gy ? 1 : 0;
      pe.structure_va[name] = va;
      va_hits[name] += va;
      va_total[name] += 1;
      mad_sum += mad;
      ++n_structs;
    }
    pe.pa = (n_structs > 0 && mad_sum / n_structs < threshold_gy) ? 1 : 0;
    rep.patients.push_back(std::move(pe));
  }

  rep.dose_score = dose_score(errors);
  if (dvh_count == 0)
    throw std::invalid_argument("evaluate_cohort: no structures anywhere");
  rep.dvh_score = dvh_abs_sum / static_cast<double>(dvh_count);

  double rva_sum = 0.0;
  for (const auto& [name, total] : va_total) {
    const double r = static_cast<double>(va_hits[name]) / total;
    rep.r_va[name] = r;
    rep.r_va_patients[name] = total;
    rva_sum += r;
  }
  rep.r_va_mean = va_total.empty() ? 0.0 : rva_sum / static_cast<double>(va_total.size());

  int pa_sum = 0;
  for (const PatientEval& pe : rep.patients) pa_sum += pe.pa;
  rep.r_pa = static_cast<double>(pa_sum) / static_cast<double>(rep.patients.size());
  return rep;
}

std::string MetricReport::to_json() const {
  ordered_json j;
  j["acceptance_threshold_gy"] = acceptance_threshold_gy;
  j["dose_score"] = dose_score;
  j["dvh_score"] = dvh_score;
  j["r_va_mean"] = r_va_mean;
  j["r_pa"] = r_pa;
  ordered_json per_structure = ordered_json::object();
  for (const std::string& name : structure_vocabulary()) {
    auto it = r_va.find(name);
    if (it == r_va.end()) continue;
    per_structure[name] = {{"r_va", it->second},
                           {"n_patients", r_va_patients.at(name)}};
  }
  j["per_structure"] = per_structure;
  ordered_json pts = ordered_json::array();
  for (const PatientEval& pe : patients) {
    ordered_json pj;
    pj["id"] = pe.id;
    pj["dose_error"] = pe.dose_error;
    pj["pa"] = pe.pa;
    ordered_json sj = ordered_json::object();
    for (const std::string& name : structure_vocabulary()) {
      auto it = pe.structure_mad.find(name);
      if (it == pe.structure_mad.end()) continue;
      sj[name] = {{"mean_abs_diff", it->second}, {"va", pe.structure_va.at(name)}};
    }
    pj["structures"] = sj;
    pts.push_back(pj);
  }
  j["patients"] = pts;
  return j.dump(2) + "\n";
}

std::string MetricReport::rva_csv() const {
  std::ostringstream out;
  out << "structure,r_va,n_patients\n";
  for (const std::string& name : structure_vocabulary()) {
    auto it = r_va.find(name);
    if (it == r_va.end()) continue;
    out << name << "," << format_double(it->second) << ","
        << r_va_patients.at(name) << "\n";
  }
  return out.str();
}

std::vector<double> exact_dvh(const Grid3& dose, const Grid3& mask,
                              const std::vector<double>& sample_doses) {
  double total = 0.0;
  for (double v : mask.v) total += v;
  if (total <= 0.0) throw std::invalid_argument("exact_dvh: empty mask");
  std::vector<double> out;
  out.reserve(sample_doses.size());
  for (double s : sample_doses) {
    double count = 0.0;
    for (std::size_t i = 0; i < mask.v.size(); ++i)
      if (mask.v[i] != 0.0 && dose.v[i] >= s) count += 1.0;
    out.push_back(count / total);
  }
  return out;
}

}  // namespace dosepred
