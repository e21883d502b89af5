#pragma once

#include <filesystem>
#include <string>

#include "dosepred/volume.hpp"

namespace dosepred {

/// Sparse on-disk layout per patient directory:
///   meta.json                  {"id", "shape": [H,W,D], "voxel_dims_mm": [dx,dy,dz]}
///   ct.csv, dose.csv           header "index,value", one row per nonzero voxel
///   possible_dose_mask.csv     header "index", one row per set voxel
///   <StructureName>.csv        header "index", present only when contoured
/// Linear index convention: idx = i*(W*D) + j*D + k. UTF-8, LF endings.
/// Values are printed shortest-round-trip, so write/load is bit-exact.
Patient load_patient(const std::filesystem::path& dir);
void write_patient(const Patient& p, const std::filesystem::path& dir);

/// Dense dose grid from a sparse "index,value" CSV with a known shape.
Grid3 load_sparse_values(const std::filesystem::path& file,
                         std::array<int, 3> shape);
void write_sparse_values(const Grid3& g, const std::filesystem::path& file);

std::string format_double(double v);  // shortest round-trip decimal

}  // namespace dosepred
