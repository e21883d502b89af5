#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dosepred/volume.hpp"

namespace dosepred {

/// Dose order statistics on a masked region. OARs report d_0_1cc and d_mean;
/// PTVs report d_1, d_95, d_99. Percentiles use the nearest-rank-lower
/// convention on the ascending sort: D_x = value at floor((1-x/100)*(N-1)).
/// D_0.1cc is the value at descending index floor(0.1cc / voxel_volume_cc),
/// clamped to [0, N-1].
struct DvhCriteria {
  StructureKind kind;
  double d_0_1cc = 0.0;
  double d_mean = 0.0;
  double d_1 = 0.0;
  double d_95 = 0.0;
  double d_99 = 0.0;

  std::vector<double> values() const;  // the criteria relevant for the kind
};

struct PatientEval {
  std::string id;
  double dose_error = 0.0;  // Gy, masked mean absolute difference
  // per structure: mean |pred - gt| within the structure, and VA bit
  std::map<std::string, double> structure_mad;
  std::map<std::string, int> structure_va;
  int pa = 0;
};

struct MetricReport {
  double acceptance_threshold_gy = 3.0;
  double dose_score = 0.0;
  double dvh_score = 0.0;
  std::map<std::string, double> r_va;        // per structure
  std::map<std::string, int> r_va_patients;  // denominator per structure
  double r_va_mean = 0.0;
  double r_pa = 0.0;
  std::vector<PatientEval> patients;

  std::string to_json() const;            // stable key order, full precision
  std::string rva_csv() const;            // structure,r_va,n_patients
};

double dose_error(const Grid3& pred, const Grid3& gt, const Grid3& mask);
double dose_score(const std::vector<double>& per_patient_errors);

DvhCriteria dvh_criteria(const Grid3& dose, const Grid3& mask,
                         StructureKind kind,
                         const std::array<double, 3>& voxel_dims_mm);
/// Descending-sort index used for D_0.1cc given voxel dimensions.
int d01cc_index(const std::array<double, 3>& voxel_dims_mm, std::int64_t n);

int volume_acceptance(const Grid3& pred, const Grid3& gt,
                      const Grid3& structure_mask, double threshold_gy);

/// Full cohort evaluation: Dose Score, DVH Score over present structures,
/// per-structure R_VA averaged over patients possessing the structure, and
/// patient-wise acceptance from the unweighted mean of structure-level mean
/// absolute differences.
MetricReport evaluate_cohort(const std::vector<Patient>& gt,
                             const std::vector<Grid3>& pred,
                             double threshold_gy = 3.0);

/// Exact counting DVH: fraction of masked voxels with dose >= each sample.
std::vector<double> exact_dvh(const Grid3& dose, const Grid3& mask,
                              const std::vector<double>& sample_doses);

}  // namespace dosepred
