#include "dosepred/patient_io.hpp"

#include <charconv>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>
#include <stdexcept>

namespace dosepred {

namespace fs = std::filesystem;
using nlohmann::json;

std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::int64_t parse_index(const std::string& tok, const fs::path& file) {
  std::int64_t idx = 0;
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), idx);
  if (res.ec != std::errc() || res.ptr != tok.data() + tok.size() || idx < 0)
    throw std::runtime_error("malformed index '" + tok + "' in " + file.string());
  return idx;
}

double parse_value(const std::string& tok, const fs::path& file) {
  double v = 0.0;
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc() || res.ptr != tok.data() + tok.size())
    throw std::runtime_error("malformed value '" + tok + "' in " + file.string());
  return v;
}

// Lines of a CSV after the header, ignoring a trailing empty line.
std::vector<std::string> data_lines(const fs::path& file,
                                    const std::string& expected_header) {
  std::string text = read_file(file);
  std::vector<std::string> lines;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    lines.push_back(text.substr(pos, nl - pos));
    pos = nl + 1;
  }
  if (lines.empty() || lines[0] != expected_header)
    throw std::runtime_error("missing '" + expected_header + "' header in " +
                             file.string());
  lines.erase(lines.begin());
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  return lines;
}

Grid3 load_sparse_mask(const fs::path& file, std::array<int, 3> shape) {
  Grid3 g(shape);
  std::set<std::int64_t> seen;
  for (const std::string& line : data_lines(file, "index")) {
    const std::int64_t idx = parse_index(line, file);
    if (idx >= g.size())
      throw std::runtime_error("index out of range in " + file.string());
    if (!seen.insert(idx).second)
      throw std::runtime_error("duplicate index in " + file.string());
    g.v[static_cast<std::size_t>(idx)] = 1.0;
  }
  return g;
}

void write_sparse_mask(const Grid3& g, const fs::path& file) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  out << "index\n";
  for (std::int64_t i = 0; i < g.size(); ++i)
    if (g.v[static_cast<std::size_t>(i)] != 0.0) out << i << "\n";
}

}  // namespace

Grid3 load_sparse_values(const fs::path& file, std::array<int, 3> shape) {
  Grid3 g(shape);
  std::set<std::int64_t> seen;
  for (const std::string& line : data_lines(file, "index,value")) {
    const std::size_t comma = line.find(',');
    if (comma == std::string::npos)
      throw std::runtime_error("malformed row in " + file.string());
    const std::int64_t idx = parse_index(line.substr(0, comma), file);
    if (idx >= g.size())
      throw std::runtime_error("index out of range in " + file.string());
    if (!seen.insert(idx).second)
      throw std::runtime_error("duplicate index in " + file.string());
    g.v[static_cast<std::size_t>(idx)] = parse_value(line.substr(comma + 1), file);
  }
  return g;
}

void write_sparse_values(const Grid3& g, const fs::path& file) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  out << "index,value\n";
  for (std::int64_t i = 0; i < g.size(); ++i) {
    const double v = g.v[static_cast<std::size_t>(i)];
    if (v != 0.0) out << i << "," << format_double(v) << "\n";
  }
}

Patient load_patient(const fs::path& dir) {
  const fs::path meta_path = dir / "meta.json";
  if (!fs::exists(meta_path))
    throw std::runtime_error("missing meta.json in " + dir.string());
  json meta = json::parse(read_file(meta_path));

  Patient p;
  p.id = meta.at("id").get<std::string>();
  auto shape = meta.at("shape").get<std::vector<int>>();
  auto dims = meta.at("voxel_dims_mm").get<std::vector<double>>();
  if (shape.size() != 3 || dims.size() != 3)
    throw std::runtime_error("bad shape/voxel_dims_mm in " + meta_path.string());
  p.shape = {shape[0], shape[1], shape[2]};
  p.voxel_dims_mm = {dims[0], dims[1], dims[2]};

  p.ct.g = load_sparse_values(dir / "ct.csv", p.shape);
  p.dose_gt = load_sparse_values(dir / "dose.csv", p.shape);
  p.possible_dose_mask = load_sparse_mask(dir / "possible_dose_mask.csv", p.shape);
  for (const std::string& name : structure_vocabulary()) {
    const fs::path f = dir / (name + ".csv");
    if (fs::exists(f)) p.structures[name] = load_sparse_mask(f, p.shape);
  }
  p.validate();
  return p;
}

void write_patient(const Patient& p, const fs::path& dir) {
  p.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec && !fs::exists(dir))
    throw std::runtime_error("cannot create " + dir.string());

  json meta;
  meta["id"] = p.id;
  meta["shape"] = {p.shape[0], p.shape[1], p.shape[2]};
  meta["voxel_dims_mm"] = {p.voxel_dims_mm[0], p.voxel_dims_mm[1],
                           p.voxel_dims_mm[2]};
  std::ofstream mout(dir / "meta.json", std::ios::binary);
  if (!mout) throw std::runtime_error("cannot write meta.json in " + dir.string());
  mout << meta.dump(2) << "\n";

  write_sparse_values(p.ct.g, dir / "ct.csv");
  write_sparse_values(p.dose_gt, dir / "dose.csv");
  write_sparse_mask(p.possible_dose_mask, dir / "possible_dose_mask.csv");
  for (const auto& [name, g] : p.structures)
    write_sparse_mask(g, dir / (name + ".csv"));
}

}  // namespace dosepred
