#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dosepred/volume.hpp"

namespace dosepred {

struct Sphere {
  std::string name;              // vocabulary name; PTVs carry prescriptions
  std::array<double, 3> center_mm{};
  double radius_mm = 0.0;
};

/// Synthetic patient with an analytically known dose field: inside any PTV
/// sphere the dose equals its prescription; outside it decays as
/// prescription * exp(-surface_distance / falloff), taking the max over PTVs,
/// restricted to the body ellipsoid.
struct PhantomSpec {
  std::string id = "phantom";
  std::array<int, 3> shape{32, 32, 32};
  std::array<double, 3> voxel_dims_mm{3.5, 3.5, 2.0};
  std::array<double, 3> body_center_mm{};
  std::array<double, 3> body_radii_mm{};
  std::vector<Sphere> ptv_spheres;
  std::vector<Sphere> oar_spheres;
  double falloff_mm = 8.0;
  std::uint64_t seed = 0;
};

Patient generate(const PhantomSpec& spec);

/// Randomized but deterministic spec: body ellipsoid filling most of the
/// grid, 1-3 PTVs with random prescriptions, 2-4 OARs, all inside the body.
PhantomSpec random_phantom_spec(std::array<int, 3> shape, std::uint64_t seed,
                                const std::string& id);

std::vector<Patient> generate_cohort(int count, std::array<int, 3> shape,
                                     std::uint64_t seed);

}  // namespace dosepred
