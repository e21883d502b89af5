#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dosepred/tensor.hpp"

namespace dosepred {

/// Dense 3D grid, row-major: idx = i*(W*D) + j*D + k for voxel (i, j, k).
struct Grid3 {
  std::array<int, 3> shape{0, 0, 0};
  std::vector<double> v;

  Grid3() = default;
  explicit Grid3(std::array<int, 3> s, double fill = 0.0)
      : shape(s),
        v(static_cast<std::size_t>(s[0]) * s[1] * s[2], fill) {}

  std::int64_t size() const {
    return static_cast<std::int64_t>(shape[0]) * shape[1] * shape[2];
  }
  std::int64_t index(int i, int j, int k) const {
    return (static_cast<std::int64_t>(i) * shape[1] + j) * shape[2] + k;
  }
  double& at(int i, int j, int k) { return v[static_cast<std::size_t>(index(i, j, k))]; }
  double at(int i, int j, int k) const {
    return v[static_cast<std::size_t>(index(i, j, k))];
  }
  bool same_shape(const Grid3& o) const { return shape == o.shape; }
};

/// Raw Hounsfield-unit CT. Distinct from NormalizedCt so that preprocessing
/// cannot be applied twice.
struct HuCt {
  Grid3 g;
};

/// CT after clip to [-1024, 1500] HU and division by 1000.
struct NormalizedCt {
  Grid3 g;
};

enum class StructureKind { OAR, PTV };

/// Fixed structure vocabulary in channel order. Any subset may be absent on a
/// given patient.
const std::vector<std::string>& structure_vocabulary();
bool is_known_structure(const std::string& name);
StructureKind structure_kind(const std::string& name);
/// Prescription in Gy for PTV56/PTV63/PTV70; throws for OARs.
double ptv_prescription(const std::string& name);

/// One OpenKBP-style case with dense grids.
struct Patient {
  std::string id;
  std::array<int, 3> shape{0, 0, 0};
  std::array<double, 3> voxel_dims_mm{0, 0, 0};
  HuCt ct;
  Grid3 dose_gt;
  Grid3 possible_dose_mask;
  std::map<std::string, Grid3> structures;

  void validate() const;  // throws on invariant violation
};

/// Patient with the CT already normalized; the form augmentation and model
/// input assembly operate on.
struct PreparedPatient {
  std::string id;
  std::array<int, 3> shape{0, 0, 0};
  std::array<double, 3> voxel_dims_mm{0, 0, 0};
  NormalizedCt ct;
  Grid3 dose_gt;
  Grid3 possible_dose_mask;
  std::map<std::string, Grid3> structures;
};

NormalizedCt preprocess_ct(const HuCt& ct);
PreparedPatient preprocess(const Patient& p);

/// Channel stack [12, H, W, D]: normalized CT, the 10 vocabulary structures in
/// order (zeros when absent), then the possible-dose mask.
Tensor assemble_input(const PreparedPatient& p);

constexpr int kInputChannels = 12;

}  // namespace dosepred
