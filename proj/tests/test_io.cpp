#include <catch2/catch_amalgamated.hpp>
#include <filesystem>
#include <fstream>

#include "refmaps/io.hpp"
#include "refmaps/rng.hpp"

using namespace refmaps;
namespace fs = std::filesystem;

namespace {

fs::path make_tmp_dir(const std::string& tag) {
  static int counter = 0;
  const fs::path dir = fs::temp_directory_path() / ("refmaps_io_" + tag + "_" + std::to_string(counter++));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void check_dirs_identical(const fs::path& a, const fs::path& b) {
  size_t count_a = 0;
  for (const auto& entry : fs::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    ++count_a;
    const fs::path rel = fs::relative(entry.path(), a);
    INFO("file " << rel);
    REQUIRE(fs::exists(b / rel));
    CHECK(read_bytes(entry.path()) == read_bytes(b / rel));
  }
  size_t count_b = 0;
  for (const auto& entry : fs::recursive_directory_iterator(b))
    if (entry.is_regular_file()) ++count_b;
  CHECK(count_a == count_b);
}

GroundTruth sample_truth(int channels, std::uint64_t seed) {
  SceneSpec spec;
  spec.surface = SurfaceKind::Sphere;
  spec.image_size = 24;
  spec.channels = channels;
  for (int v = 0; v < 2; ++v) spec.view_rotations.push_back(rotation_about(0, 0, 1, 90.0 * v));
  LightingVector sig = diffuse_lighting();
  sig[0] = 0.25;
  spec.lighting.assign(2, std::vector<LightingVector>(channels, sig));
  spec.albedo.kind = AlbedoKind::Bands;
  spec.albedo.bands = 2;
  spec.albedo.values = {std::vector<double>(channels, 0.9), std::vector<double>(channels, 0.4)};
  return generate(spec, seed);
}

}  // namespace

TEST_CASE("PFM round-trips") {
  const fs::path dir = make_tmp_dir("pfm");
  Rng rng(3);

  SECTION("grayscale: values survive as float32 and bytes are stable") {
    ScalarField f(PixelDomain::full(7, 5));
    for (auto& v : f.values) v = rng.uniform(-2.0, 2.0);
    io::write_pfm(dir / "gray.pfm", f);
    const auto loaded = io::read_pfm(dir / "gray.pfm");
    REQUIRE(loaded.size() == 1);
    for (int r = 0; r < 5; ++r)
      for (int c = 0; c < 7; ++c)
        CHECK(loaded[0].at(r, c) == static_cast<double>(static_cast<float>(f.at(r, c))));
    io::write_pfm(dir / "gray2.pfm", loaded[0]);
    CHECK(read_bytes(dir / "gray.pfm") == read_bytes(dir / "gray2.pfm"));
  }

  SECTION("color") {
    ScalarField r(PixelDomain::full(4, 6)), g(PixelDomain::full(4, 6)), b(PixelDomain::full(4, 6));
    for (auto& v : r.values) v = rng.uniform(0.0, 1.0);
    for (auto& v : g.values) v = rng.uniform(0.0, 1.0);
    for (auto& v : b.values) v = rng.uniform(0.0, 1.0);
    io::write_pfm(dir / "color.pfm", {&r, &g, &b});
    const auto loaded = io::read_pfm(dir / "color.pfm");
    REQUIRE(loaded.size() == 3);
    CHECK(loaded[1].at(2, 3) == static_cast<double>(static_cast<float>(g.at(2, 3))));
    io::write_pfm(dir / "color2.pfm", {&loaded[0], &loaded[1], &loaded[2]});
    CHECK(read_bytes(dir / "color.pfm") == read_bytes(dir / "color2.pfm"));
  }

  SECTION("bad headers are rejected") {
    std::ofstream out(dir / "bad.pfm", std::ios::binary);
    out << "P6\n2 2\n-1\n";
    out.close();
    CHECK_THROWS_AS(io::read_pfm(dir / "bad.pfm"), ValidationError);
    CHECK_THROWS_AS(io::read_pfm(dir / "missing.pfm"), ValidationError);
  }
}

TEST_CASE("PGM masks") {
  const fs::path dir = make_tmp_dir("pgm");
  PixelDomain dom(5, 4, {1, 1, 0, 0, 1, 1, 1, 1, 1, 1, 0, 1, 0, 1, 0, 1, 1, 1, 1, 1});
  io::write_pgm_mask(dir / "mask.pgm", dom);
  const PixelDomain loaded = io::read_pgm_mask(dir / "mask.pgm");
  CHECK(loaded == dom);

  // Values other than 0/255 are rejected.
  std::ofstream out(dir / "gray.pgm", std::ios::binary);
  out << "P5\n2 1\n255\n";
  out.put(char(255));
  out.put(char(128));
  out.close();
  CHECK_THROWS_AS(io::read_pgm_mask(dir / "gray.pgm"), ValidationError);
}

TEST_CASE("correspondence table round-trips and enforces canonical order") {
  const fs::path dir = make_tmp_dir("corr");
  CorrespondenceSet set;
  set.entries = {{0, 1, 2, 1, 3, 4}, {0, 0, 0, 2, 5, 6}, {1, 9, 9, 3, 0, 1}};
  io::write_correspondences(dir / "c.bin", set);
  const CorrespondenceSet loaded = io::read_correspondences(dir / "c.bin");
  REQUIRE(loaded.entries.size() == 3);
  CHECK(loaded.entries[0] == set.entries[0]);
  CHECK(loaded.entries[2] == set.entries[2]);

  CorrespondenceSet bad;
  bad.entries = {{1, 0, 0, 0, 0, 0}};
  io::write_correspondences(dir / "bad.bin", bad);
  CHECK_THROWS_AS(io::read_correspondences(dir / "bad.bin"), ValidationError);
}

TEST_CASE("lighting text round-trips doubles exactly") {
  const fs::path dir = make_tmp_dir("light");
  Rng rng(11);
  std::vector<LightingVector> lights(3);
  for (auto& s : lights)
    for (auto& v : s) v = rng.uniform(-2.0, 2.0) * std::exp(rng.uniform(-8.0, 8.0));
  io::write_lighting(dir / "l.txt", lights);
  const auto loaded = io::read_lighting(dir / "l.txt");
  REQUIRE(loaded.size() == 3);
  for (size_t i = 0; i < 3; ++i)
    for (int k = 0; k < 9; ++k) CHECK(loaded[i][k] == lights[i][k]);
}

TEST_CASE("nu planes round-trip through a stacked PFM") {
  const fs::path dir = make_tmp_dir("nu");
  const GroundTruth truth = sample_truth(1, 5);
  const GeometricField& geo = truth.problem.views[0].geometry;
  io::write_nu_pfm(dir / "nu.pfm", geo);
  const GeometricField loaded = io::read_nu_pfm(dir / "nu.pfm", geo.domain);
  const PixelDomain& dom = geo.domain;
  for (int r = 0; r < dom.height; ++r)
    for (int c = 0; c < dom.width; ++c)
      if (dom.in(r, c))
        for (int k = 0; k < 9; ++k)
          CHECK(loaded.at(r, c)[k] == static_cast<double>(static_cast<float>(geo.at(r, c)[k])));
}

TEST_CASE("dataset store/load round-trip") {
  const fs::path dir = make_tmp_dir("ds");
  const GroundTruth truth = sample_truth(1, 7);
  io::store_dataset(dir / "a", truth);
  const io::LoadedDataset ds = io::load_dataset(dir / "a");

  CHECK(ds.problem.channels == 1);
  CHECK(ds.problem.views.size() == 2);
  CHECK(ds.has_ground_truth);
  CHECK(ds.problem.correspondences.entries.size() == truth.problem.correspondences.entries.size());
  CHECK(validate_problem(ds.problem).empty());

  // Values are the float32-quantized renders.
  const PixelDomain& dom = ds.problem.views[0].geometry.domain;
  CHECK(dom == truth.problem.views[0].geometry.domain);
  for (int r = 0; r < dom.height; ++r)
    for (int c = 0; c < dom.width; ++c)
      if (dom.in(r, c)) {
        CHECK(ds.problem.views[0].images[0].at(r, c) ==
              static_cast<double>(static_cast<float>(truth.problem.views[0].images[0].at(r, c))));
        CHECK(ds.gt_reflectance[0][0].at(r, c) ==
              static_cast<double>(static_cast<float>(truth.reflectance[0][0].at(r, c))));
      }
  for (int k = 0; k < 9; ++k) CHECK(ds.gt_lighting[0][1][k] == truth.lighting[0][1][k]);

  // Store the loaded dataset again: every byte identical.
  GroundTruth reloaded;
  reloaded.problem = ds.problem;
  reloaded.reflectance = ds.gt_reflectance;
  reloaded.lighting = ds.gt_lighting;
  for (size_t v = 0; v < ds.problem.views.size(); ++v) {
    NormalField nf(ds.problem.views[v].geometry.domain);
    for (int r = 0; r < nf.domain.height; ++r)
      for (int c = 0; c < nf.domain.width; ++c)
        if (nf.domain.in(r, c)) {
          const Vec9& nu = ds.problem.views[v].geometry.at(r, c);
          nf.at(r, c) = Vec3{nu[0], nu[1], nu[2]};
        }
    reloaded.normals.push_back(std::move(nf));
  }
  io::store_dataset(dir / "b", reloaded);
  check_dirs_identical(dir / "a", dir / "b");
}

TEST_CASE("dataset loader validates structure") {
  const fs::path dir = make_tmp_dir("dsbad");
  const GroundTruth truth = sample_truth(1, 9);
  io::store_dataset(dir / "ds", truth);

  SECTION("missing referenced file") {
    fs::remove(dir / "ds" / "views" / "001_image.pfm");
    CHECK_THROWS_AS(io::load_dataset(dir / "ds"), ValidationError);
  }
  SECTION("dimension mismatch between image and mask") {
    ScalarField wrong(PixelDomain::full(8, 8));
    io::write_pfm(dir / "ds" / "views" / "000_image.pfm", wrong);
    CHECK_THROWS_AS(io::load_dataset(dir / "ds"), ValidationError);
  }
  SECTION("unknown manifest keys are rejected") {
    std::ofstream out(dir / "ds" / "manifest.txt", std::ios::app);
    out << "mystery = 1\n";
    out.close();
    CHECK_THROWS_AS(io::load_dataset(dir / "ds"), ValidationError);
  }
}

TEST_CASE("solution store/load round-trip") {
  const fs::path dir = make_tmp_dir("sol");
  const GroundTruth truth = sample_truth(3, 13);
  Solution sol;
  sol.reflectance = truth.reflectance;
  sol.lighting = truth.lighting;
  sol.converged = true;
  sol.trace.records.push_back(TraceRecord{0, EnergyBreakdown{1, 2, 3, 6}, 0.0, 0, 0.0, false});
  SolverConfig cfg;
  cfg.lambda = 1.5;
  cfg.mu = 1000.0;
  io::store_solution(dir / "est", sol, cfg);

  const io::LoadedSolution loaded = io::load_solution(dir / "est");
  CHECK(loaded.channels == 3);
  REQUIRE(loaded.reflectance.size() == 3);
  REQUIRE(loaded.reflectance[0].size() == 2);
  const PixelDomain& dom = truth.problem.views[0].geometry.domain;
  for (int r = 0; r < dom.height; ++r)
    for (int c = 0; c < dom.width; ++c)
      if (dom.in(r, c))
        CHECK(loaded.reflectance[2][0].at(r, c) ==
              static_cast<double>(static_cast<float>(truth.reflectance[2][0].at(r, c))));
  for (int k = 0; k < 9; ++k) CHECK(loaded.lighting[1][1][k] == truth.lighting[1][1][k]);
}

TEST_CASE("trace CSV") {
  const fs::path dir = make_tmp_dir("trace");
  SolverTrace trace;
  trace.records.push_back(TraceRecord{0, EnergyBreakdown{0.5, 0.25, 0.125, 0.875}, 0.0, 0, 0.01, false});
  trace.records.push_back(TraceRecord{1, EnergyBreakdown{0.25, 0.2, 0.1, 0.55}, 0.37, 12, 0.02, true});
  io::write_trace_csv(dir / "t.csv", trace);
  std::ifstream in(dir / "t.csv");
  std::string header, row0, row1;
  std::getline(in, header);
  std::getline(in, row0);
  std::getline(in, row1);
  CHECK(header == "iter,E_total,E_photo,E_smooth,E_consist,rel_change,cg_iters,seconds");
  CHECK(row0.substr(0, 2) == "0,");
  CHECK(row1.find(",12,") != std::string::npos);
  CHECK(row1.find("0.55") != std::string::npos);
}

TEST_CASE("PNG preview writes a plausible file") {
  const fs::path dir = make_tmp_dir("png");
  const GroundTruth truth = sample_truth(1, 15);
  io::write_png_preview(dir / "p.png", {&truth.reflectance[0][0]});
  const std::string bytes = read_bytes(dir / "p.png");
  REQUIRE(bytes.size() > 8);
  CHECK(static_cast<unsigned char>(bytes[0]) == 0x89);
  CHECK(bytes.substr(1, 3) == "PNG");
}
