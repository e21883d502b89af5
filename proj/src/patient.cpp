#include "dosepred/volume.hpp"

#include <algorithm>
#include <stdexcept>

namespace dosepred {

const std::vector<std::string>& structure_vocabulary() {
  static const std::vector<std::string> kNames = {
      "Brainstem", "SpinalCord", "RightParotid", "LeftParotid", "Esophagus",
      "Larynx",    "Mandible",   "PTV56",        "PTV63",       "PTV70"};
  return kNames;
}

bool is_known_structure(const std::string& name) {
  const auto& v = structure_vocabulary();
  return std::find(v.begin(), v.end(), name) != v.end();
}

StructureKind structure_kind(const std::string& name) {
  if (!is_known_structure(name))
    throw std::invalid_argument("unknown structure: " + name);
  return name.rfind("PTV", 0) == 0 ? StructureKind::PTV : StructureKind::OAR;
}

double ptv_prescription(const std::string& name) {
  if (name == "PTV56") return 56.0;
  if (name == "PTV63") return 63.0;
  if (name == "PTV70") return 70.0;
  throw std::invalid_argument("no prescription for structure: " + name);
}

namespace {

void check_binary(const Grid3& g, const std::string& what) {
  for (double v : g.v)
    if (v != 0.0 && v != 1.0)
      throw std::invalid_argument(what + " contains a non-binary value");
}

}  // namespace

void Patient::validate() const {
  if (shape[0] <= 0 || shape[1] <= 0 || shape[2] <= 0)
    throw std::invalid_argument("patient shape must be positive");
  const Grid3* grids[] = {&ct.g, &dose_gt, &possible_dose_mask};
  for (const Grid3* g : grids)
    if (g->shape != shape)
      throw std::invalid_argument("patient grids disagree on shape");
  for (double v : dose_gt.v)
    if (v < 0.0) throw std::invalid_argument("negative dose value");
  check_binary(possible_dose_mask, "possible dose mask");
  for (const auto& [name, g] : structures) {
    if (!is_known_structure(name))
      throw std::invalid_argument("unknown structure: " + name);
    if (g.shape != shape)
      throw std::invalid_argument("structure grid disagrees on shape");
    check_binary(g, "structure " + name);
  }
}

NormalizedCt preprocess_ct(const HuCt& ct) {
  NormalizedCt out;
  out.g = ct.g;
  for (double& v : out.g.v) v = std::clamp(v, -1024.0, 1500.0) / 1000.0;
  return out;
}

PreparedPatient preprocess(const Patient& p) {
  PreparedPatient out;
  out.id = p.id;
  out.shape = p.shape;
  out.voxel_dims_mm = p.voxel_dims_mm;
  out.ct = preprocess_ct(p.ct);
  out.dose_gt = p.dose_gt;
  out.possible_dose_mask = p.possible_dose_mask;
  out.structures = p.structures;
  return out;
}

Tensor assemble_input(const PreparedPatient& p) {
  const int h = p.shape[0], w = p.shape[1], d = p.shape[2];
  const std::size_t vox = static_cast<std::size_t>(h) * w * d;
  Tensor input({kInputChannels, h, w, d});
  std::copy(p.ct.g.v.begin(), p.ct.g.v.end(), input.data().begin());
  const auto& vocab = structure_vocabulary();
  for (std::size_t c = 0; c < vocab.size(); ++c) {
    auto it = p.structures.find(vocab[c]);
    if (it != p.structures.end())
      std::copy(it->second.v.begin(), it->second.v.end(),
                input.data().begin() + (c + 1) * vox);
  }
  std::copy(p.possible_dose_mask.v.begin(), p.possible_dose_mask.v.end(),
            input.data().begin() + (kInputChannels - 1) * vox);
  return input;
}

}  // namespace dosepred
