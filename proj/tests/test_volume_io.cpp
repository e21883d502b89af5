#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "dosepred/patient_io.hpp"
#include "dosepred/phantom.hpp"
#include "dosepred/rng.hpp"
#include "dosepred/volume.hpp"

using namespace dosepred;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("dosepred_io_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Patient random_patient(std::uint64_t seed) {
  return generate(random_phantom_spec({8, 8, 8}, seed, "io_case"));
}

}  // namespace

TEST_CASE("linear index convention is i*(W*D) + j*D + k") {
  Grid3 g({2, 3, 4});
  CHECK(g.index(0, 0, 0) == 0);
  CHECK(g.index(0, 0, 3) == 3);
  CHECK(g.index(0, 1, 0) == 4);
  CHECK(g.index(1, 0, 0) == 12);
  CHECK(g.index(1, 2, 3) == 23);

  // a voxel written through at() lands at the expected CSV index
  const fs::path dir = temp_dir("index");
  g.at(1, 2, 3) = 42.5;
  write_sparse_values(g, dir / "v.csv");
  std::ifstream in(dir / "v.csv");
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  CHECK(header == "index,value");
  CHECK(row == "23,42.5");
}

TEST_CASE("patient round trip is bit exact") {
  const fs::path dir = temp_dir("roundtrip");
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    Patient p = random_patient(seed);
    write_patient(p, dir / std::to_string(seed));
    Patient q = load_patient(dir / std::to_string(seed));
    CHECK(q.id == p.id);
    CHECK(q.shape == p.shape);
    CHECK(q.voxel_dims_mm == p.voxel_dims_mm);
    CHECK(q.ct.g.v == p.ct.g.v);
    CHECK(q.dose_gt.v == p.dose_gt.v);
    CHECK(q.possible_dose_mask.v == p.possible_dose_mask.v);
    REQUIRE(q.structures.size() == p.structures.size());
    for (const auto& [name, mask] : p.structures)
      CHECK(q.structures.at(name).v == mask.v);
  }
}

TEST_CASE("second write of the same patient is byte identical") {
  const fs::path a = temp_dir("bytes_a"), b = temp_dir("bytes_b");
  Patient p = random_patient(9);
  write_patient(p, a / "p");
  write_patient(p, b / "p");
  for (const auto& e : fs::directory_iterator(a / "p")) {
    std::ifstream fa(e.path(), std::ios::binary);
    std::ifstream fb(b / "p" / e.path().filename(), std::ios::binary);
    std::string sa((std::istreambuf_iterator<char>(fa)), {});
    std::string sb((std::istreambuf_iterator<char>(fb)), {});
    CHECK(sa == sb);
  }
}

TEST_CASE("written files use LF endings and omit zeros") {
  const fs::path dir = temp_dir("lf");
  Grid3 g({2, 2, 2});
  g.at(0, 0, 1) = 1.5;
  write_sparse_values(g, dir / "v.csv");
  std::ifstream in(dir / "v.csv", std::ios::binary);
  std::string all((std::istreambuf_iterator<char>(in)), {});
  CHECK(all == "index,value\n1,1.5\n");
}

TEST_CASE("loader errors") {
  const fs::path dir = temp_dir("errors");

  SUBCASE("missing meta.json") {
    fs::create_directories(dir / "empty");
    CHECK_THROWS(load_patient(dir / "empty"));
  }

  SUBCASE("out-of-range index") {
    std::ofstream(dir / "v.csv") << "index,value\n9999,1.0\n";
    CHECK_THROWS(load_sparse_values(dir / "v.csv", {2, 2, 2}));
  }

  SUBCASE("duplicate index") {
    std::ofstream(dir / "d.csv") << "index,value\n3,1.0\n3,2.0\n";
    CHECK_THROWS(load_sparse_values(dir / "d.csv", {2, 2, 2}));
  }

  SUBCASE("bad header") {
    std::ofstream(dir / "h.csv") << "idx,val\n0,1.0\n";
    CHECK_THROWS(load_sparse_values(dir / "h.csv", {2, 2, 2}));
  }
}

TEST_CASE("ct preprocessing clips then scales") {
  Grid3 g({1, 1, 4});
  g.v = {-2000.0, 1500.0, 1501.0, 0.0};
  NormalizedCt n = preprocess_ct(HuCt{g});
  CHECK(n.g.v[0] == -1.024);
  CHECK(n.g.v[1] == 1.5);
  CHECK(n.g.v[2] == 1.5);
  CHECK(n.g.v[3] == 0.0);
}

TEST_CASE("patient validation rejects malformed cases") {
  Patient p = random_patient(4);

  SUBCASE("valid as generated") { CHECK_NOTHROW(p.validate()); }

  SUBCASE("non-binary mask") {
    p.possible_dose_mask.v[0] = 0.5;
    CHECK_THROWS(p.validate());
  }

  SUBCASE("negative dose") {
    p.dose_gt.v[0] = -1.0;
    CHECK_THROWS(p.validate());
  }

  SUBCASE("unknown structure name") {
    p.structures["NotAStructure"] = p.possible_dose_mask;
    CHECK_THROWS(p.validate());
  }

  SUBCASE("shape mismatch") {
    p.dose_gt = Grid3({4, 4, 4});
    CHECK_THROWS(p.validate());
  }
}

TEST_CASE("input assembly stacks channels in vocabulary order") {
  Patient p = random_patient(5);
  PreparedPatient pp = preprocess(p);
  Tensor in = assemble_input(pp);
  REQUIRE(in.shape() == Shape{12, 8, 8, 8});

  const std::size_t n = 8 * 8 * 8;
  for (std::size_t i = 0; i < n; ++i) CHECK(in.data()[i] == pp.ct.g.v[i]);

  const auto& vocab = structure_vocabulary();
  for (std::size_t c = 0; c < vocab.size(); ++c) {
    const auto it = pp.structures.find(vocab[c]);
    for (std::size_t i = 0; i < n; ++i) {
      const double want = it == pp.structures.end() ? 0.0 : it->second.v[i];
      CHECK(in.data()[(c + 1) * n + i] == want);
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    CHECK(in.data()[11 * n + i] == pp.possible_dose_mask.v[i]);
}

TEST_CASE("format_double round-trips exactly") {
  RandomStream rng(6);
  for (int it = 0; it < 200; ++it) {
    const double v = rng.uniform(-80.0, 80.0);
    CHECK(std::stod(format_double(v)) == v);
  }
  CHECK(format_double(0.5) == "0.5");
  CHECK(format_double(70.0) == "70");
}
