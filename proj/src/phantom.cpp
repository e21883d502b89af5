#include "dosepred/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "dosepred/rng.hpp"

namespace dosepred {

namespace {

std::array<double, 3> voxel_center_mm(const PhantomSpec& spec, int i, int j,
                                      int k) {
  return {(i + 0.5) * spec.voxel_dims_mm[0], (j + 0.5) * spec.voxel_dims_mm[1],
          (k + 0.5) * spec.voxel_dims_mm[2]};
}

bool inside_body(const PhantomSpec& spec, const std::array<double, 3>& p) {
  double s = 0.0;
  for (int a = 0; a < 3; ++a) {
    const double r = (p[static_cast<std::size_t>(a)] -
                      spec.body_center_mm[static_cast<std::size_t>(a)]) /
                     spec.body_radii_mm[static_cast<std::size_t>(a)];
    s += r * r;
  }
  return s <= 1.0;
}

double dist_mm(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  double s = 0.0;
  for (int i = 0; i < 3; ++i) {
    const double d = a[static_cast<std::size_t>(i)] - b[static_cast<std::size_t>(i)];
    s += d * d;
  }
  return std::sqrt(s);
}

void check_sphere_in_body(const PhantomSpec& spec, const Sphere& s) {
  // conservative: sphere center must sit in the ellipsoid shrunk by the radius
  double acc = 0.0;
  for (int a = 0; a < 3; ++a) {
    const double shrunk =
        spec.body_radii_mm[static_cast<std::size_t>(a)] - s.radius_mm;
    if (shrunk <= 0.0)
      throw std::invalid_argument("sphere " + s.name + " outside body");
    const double r = (s.center_mm[static_cast<std::size_t>(a)] -
                      spec.body_center_mm[static_cast<std::size_t>(a)]) /
                     shrunk;
    acc += r * r;
  }
  if (acc > 1.0)
    throw std::invalid_argument("sphere " + s.name + " outside body");
}

}  // namespace

Patient generate(const PhantomSpec& spec) {
  for (const Sphere& s : spec.ptv_spheres) {
    if (structure_kind(s.name) != StructureKind::PTV)
      throw std::invalid_argument("ptv sphere with non-PTV name " + s.name);
    check_sphere_in_body(spec, s);
  }
  for (const Sphere& s : spec.oar_spheres) {
    if (structure_kind(s.name) != StructureKind::OAR)
      throw std::invalid_argument("oar sphere with non-OAR name " + s.name);
    check_sphere_in_body(spec, s);
  }

  Patient p;
  p.id = spec.id;
  p.shape = spec.shape;
  p.voxel_dims_mm = spec.voxel_dims_mm;
  p.ct.g = Grid3(spec.shape);
  p.dose_gt = Grid3(spec.shape);
  p.possible_dose_mask = Grid3(spec.shape);
  for (const Sphere& s : spec.ptv_spheres) p.structures[s.name] = Grid3(spec.shape);
  for (const Sphere& s : spec.oar_spheres) p.structures[s.name] = Grid3(spec.shape);

  RandomStream noise(spec.seed);
  const double shell_frac = 0.92;  // bone-like shell outside this fraction

  for (int i = 0; i < spec.shape[0]; ++i)
    for (int j = 0; j < spec.shape[1]; ++j)
      for (int k = 0; k < spec.shape[2]; ++k) {
        const auto pos = voxel_center_mm(spec, i, j, k);
        const double hu_noise = noise.uniform(-20.0, 20.0);
        if (!inside_body(spec, pos)) {
          p.ct.g.at(i, j, k) = -1000.0;
          continue;
        }
        p.possible_dose_mask.at(i, j, k) = 1.0;
        double s = 0.0;
        for (int a = 0; a < 3; ++a) {
          const double r = (pos[static_cast<std::size_t>(a)] -
                            spec.body_center_mm[static_cast<std::size_t>(a)]) /
                           spec.body_radii_mm[static_cast<std::size_t>(a)];
          s += r * r;
        }
        p.ct.g.at(i, j, k) = (std::sqrt(s) > shell_frac ? 700.0 : 0.0) + hu_noise;

        double dose = 0.0;
        for (const Sphere& sp : spec.ptv_spheres) {
          const double surf = std::max(0.0, dist_mm(pos, sp.center_mm) - sp.radius_mm);
          dose = std::max(dose, ptv_prescription(sp.name) *
                                    std::exp(-surf / spec.falloff_mm));
          if (dist_mm(pos, sp.center_mm) <= sp.radius_mm)
            p.structures[sp.name].at(i, j, k) = 1.0;
        }
        p.dose_gt.at(i, j, k) = dose;
        for (const Sphere& sp : spec.oar_spheres)
          if (dist_mm(pos, sp.center_mm) <= sp.radius_mm)
            p.structures[sp.name].at(i, j, k) = 1.0;
      }

  // drop structures the rasterization left empty
  for (auto it = p.structures.begin(); it != p.structures.end();) {
    double s = 0.0;
    for (double v : it->second.v) s += v;
    it = s == 0.0 ? p.structures.erase(it) : std::next(it);
  }
  p.validate();
  return p;
}

PhantomSpec random_phantom_spec(std::array<int, 3> shape, std::uint64_t seed,
                                const std::string& id) {
  PhantomSpec spec;
  spec.id = id;
  spec.shape = shape;
  spec.seed = derive_seed(seed, 0xC7);
  RandomStream rng(seed);

  std::array<double, 3> extent_mm{};
  for (int a = 0; a < 3; ++a)
    extent_mm[static_cast<std::size_t>(a)] =
        shape[static_cast<std::size_t>(a)] *
        spec.voxel_dims_mm[static_cast<std::size_t>(a)];
  for (int a = 0; a < 3; ++a) {
    spec.body_center_mm[static_cast<std::size_t>(a)] =
        extent_mm[static_cast<std::size_t>(a)] * 0.5;
    spec.body_radii_mm[static_cast<std::size_t>(a)] =
        extent_mm[static_cast<std::size_t>(a)] * rng.uniform(0.38, 0.46);
  }
  const double min_radius =
      *std::min_element(spec.body_radii_mm.begin(), spec.body_radii_mm.end());

  auto place_sphere = [&](const std::string& name, double rlo, double rhi) {
    Sphere s;
    s.name = name;
    s.radius_mm = rng.uniform(rlo, std::min(rhi, min_radius * 0.45));
    for (int a = 0; a < 3; ++a) {
      const double room =
          (spec.body_radii_mm[static_cast<std::size_t>(a)] - s.radius_mm) * 0.6;
      s.center_mm[static_cast<std::size_t>(a)] =
          spec.body_center_mm[static_cast<std::size_t>(a)] +
          rng.uniform(-room, room);
    }
    return s;
  };

  static const std::vector<std::string> kPtvNames = {"PTV56", "PTV63", "PTV70"};
  static const std::vector<std::string> kOarNames = {
      "Brainstem", "SpinalCord", "RightParotid", "LeftParotid",
      "Esophagus", "Larynx",     "Mandible"};

  const int n_ptv = 1 + static_cast<int>(rng.next_below(3));
  std::vector<std::string> ptvs = kPtvNames;
  for (int i = 0; i < n_ptv; ++i) {
    const std::size_t pick = rng.next_below(ptvs.size());
    spec.ptv_spheres.push_back(
        place_sphere(ptvs[pick], min_radius * 0.18, min_radius * 0.4));
    ptvs.erase(ptvs.begin() + static_cast<std::ptrdiff_t>(pick));
  }
  const int n_oar = 2 + static_cast<int>(rng.next_below(3));
  std::vector<std::string> oars = kOarNames;
  for (int i = 0; i < n_oar; ++i) {
    const std::size_t pick = rng.next_below(oars.size());
    spec.oar_spheres.push_back(
        place_sphere(oars[pick], min_radius * 0.12, min_radius * 0.3));
    oars.erase(oars.begin() + static_cast<std::ptrdiff_t>(pick));
  }
  return spec;
}

std::vector<Patient> generate_cohort(int count, std::array<int, 3> shape,
                                     std::uint64_t seed) {
  std::vector<Patient> cohort;
  cohort.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    char id[32];
    std::snprintf(id, sizeof(id), "pt_%03d", i);
    cohort.push_back(generate(random_phantom_spec(shape, derive_seed(seed, static_cast<std::uint64_t>(i)), id)));
  }
  return cohort;
}

}  // namespace dosepred
