#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "doctest.h"
#include "speg/data.hpp"
#include "speg/errors.hpp"
#include "test_util.hpp"

using namespace speg;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path = fs::temp_directory_path() / ("speg_" + tag + "_" + std::to_string(stamp));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

ImageU8 constant_image(int h, int w, unsigned char v) {
  ImageU8 img(h, w, 3);
  std::fill(img.data.begin(), img.data.end(), v);
  return img;
}

Plane random_blobs(int size, std::mt19937_64& g) {
  std::uniform_real_distribution<double> cx(0, size), axis(2, size / 3.0), ang(0, M_PI);
  std::uniform_int_distribution<int> count(1, 3);
  Plane m(size, size);
  const int k = count(g);
  for (int e = 0; e < k; ++e) {
    const double x0 = cx(g), y0 = cx(g), a = axis(g), b = axis(g), t = ang(g);
    for (int r = 0; r < size; ++r)
      for (int c = 0; c < size; ++c) {
        const double dx = c - x0, dy = r - y0;
        const double u = (dx * std::cos(t) + dy * std::sin(t)) / a;
        const double v = (-dx * std::sin(t) + dy * std::cos(t)) / b;
        if (u * u + v * v <= 1.0) m(r, c) = 1.0;
      }
  }
  return m;
}

// Squared distance from (r, c) to the nearest pixel set in `set`.
double nearest_sq(const Plane& set, int r, int c) {
  double best = INFINITY;
  for (int y = 0; y < set.height; ++y)
    for (int x = 0; x < set.width; ++x)
      if (set(y, x) > 0.5) best = std::min(best, double((y - r) * (y - r) + (x - c) * (x - c)));
  return best;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_pairs(const fs::path& root, int n) {
  fs::create_directories(root / "images");
  fs::create_directories(root / "masks");
  std::mt19937_64 g(5);
  for (int i = 0; i < n; ++i) {
    char id[16];
    std::snprintf(id, sizeof id, "%03d", i);
    write_image_png(root / "images" / (std::string(id) + ".png"), constant_image(8, 8, 40 + i));
    write_gray_png(root / "masks" / (std::string(id) + ".png"), random_blobs(8, g));
  }
}

}  // namespace

TEST_CASE("preprocess normalizes with the ImageNet statistics") {
  const Tensor white = preprocess(constant_image(10, 14, 255), 32);
  CHECK(white.shape() == Shape{1, 3, 32, 32});
  const Tensor black = preprocess(constant_image(10, 14, 0), 32);
  for (int h = 0; h < 32; ++h)
    for (int w = 0; w < 32; ++w) {
      CHECK(white.at(0, 0, h, w) == doctest::Approx((1 - 0.485) / 0.229).epsilon(1e-12));
      CHECK(white.at(0, 2, h, w) == doctest::Approx((1 - 0.406) / 0.225).epsilon(1e-12));
      CHECK(black.at(0, 0, h, w) == doctest::Approx(-0.485 / 0.229).epsilon(1e-12));
    }
  CHECK(white.at(0, 0, 0, 0) == doctest::Approx(2.2489).epsilon(1e-4));
  CHECK(black.at(0, 0, 0, 0) == doctest::Approx(-2.1179).epsilon(1e-4));
}

TEST_CASE("denormalizing recovers the scaled image") {
  std::mt19937_64 g(1);
  std::uniform_int_distribution<int> u(0, 255);
  ImageU8 img(16, 16, 3);
  for (auto& v : img.data) v = static_cast<unsigned char>(u(g));
  const Tensor back = denormalize(preprocess(img, 16));
  double worst = 0.0;
  for (int c = 0; c < 3; ++c)
    for (int h = 0; h < 16; ++h)
      for (int w = 0; w < 16; ++w) worst = std::max(worst, std::abs(back.at(0, c, h, w) - img(h, w, c) / 255.0));
  CHECK(worst < 1e-6);
}

TEST_CASE("preprocess demands three channels") {
  CHECK_THROWS_AS(preprocess(ImageU8(8, 8, 1), 32), ShapeError);
  CHECK_THROWS_AS(preprocess(ImageU8(8, 8, 4), 32), ShapeError);
}

TEST_CASE("edge map of trivial masks") {
  const Plane none = make_edge_map(Plane(12, 12));
  for (double v : none.data) CHECK(v == 0.0);
  const Plane full = make_edge_map(Plane(12, 12, 1.0));
  for (int r = 0; r < 12; ++r)
    for (int c = 0; c < 12; ++c) {
      const int d = std::min({r, c, 11 - r, 11 - c});
      CHECK(full(r, c) == (d <= 2 ? 1.0 : 0.0));
    }
}

TEST_CASE("centred square band by distance to the contour") {
  Plane sq(64, 64);
  for (int r = 22; r < 42; ++r)
    for (int c = 22; c < 42; ++c) sq(r, c) = 1.0;
  // contour: outermost ring of the square
  Plane ring(64, 64);
  for (int r = 22; r < 42; ++r)
    for (int c = 22; c < 42; ++c)
      if (r == 22 || r == 41 || c == 22 || c == 41) ring(r, c) = 1.0;
  const Plane band = make_edge_map(sq);
  for (int r = 0; r < 64; ++r)
    for (int c = 0; c < 64; ++c) CHECK(band(r, c) == (nearest_sq(ring, r, c) <= 4.0 ? 1.0 : 0.0));
  int across = 0;
  for (int c = 0; c < 32; ++c) across += band(32, c) > 0.5;
  CHECK(across == 5);
}

TEST_CASE("band covers the boundary and stays within two pixels") {
  std::mt19937_64 g(2);
  for (int t = 0; t < 30; ++t) {
    const Plane mask = random_blobs(40, g);
    const Plane boundary = morphological_boundary(mask);
    const Plane band = make_edge_map(mask);
    for (int r = 0; r < 40; ++r)
      for (int c = 0; c < 40; ++c) {
        if (boundary(r, c) > 0.5) CHECK(band(r, c) == 1.0);
        if (band(r, c) > 0.5) CHECK(nearest_sq(boundary, r, c) <= 4.0);
      }
  }
}

TEST_CASE("split sizes and determinism") {
  TempDir dir("split");
  write_pairs(dir.path, 100);
  LoadOptions opt;
  opt.cache_edges = false;
  const auto train = load_dataset(dir.path, Split::train, opt);
  const auto val = load_dataset(dir.path, Split::val, opt);
  CHECK(train.size() == 90);
  CHECK(val.size() == 10);
  std::set<std::string> ids;
  for (const auto& s : train) ids.insert(s.id);
  for (const auto& s : val) ids.insert(s.id);
  CHECK(ids.size() == 100);
  const auto again = load_dataset(dir.path, Split::train, opt);
  for (std::size_t i = 0; i < train.size(); ++i) {
    CHECK(again[i].id == train[i].id);
    CHECK(again[i].image.data == train[i].image.data);
    CHECK(again[i].edge.data == train[i].edge.data);
  }
  CHECK(load_dataset(dir.path, Split::test, opt).size() == 100);
  CHECK_FALSE(fs::exists(dir.path / "edges"));
  const auto ids_sorted = paired_ids(dir.path);
  CHECK(split_ids(ids_sorted, Split::train, 0.1, 1) != split_ids(ids_sorted, Split::train, 0.1, 2));
  CHECK(train_count(100, 0.1) == 90);
  CHECK(train_count(7, 0.1) == 7);
}

TEST_CASE("edge maps are cached beside the masks") {
  TempDir dir("cache");
  write_pairs(dir.path, 4);
  const auto first = load_dataset(dir.path, Split::test);
  REQUIRE(fs::exists(dir.path / "edges" / "000.png"));
  const auto second = load_dataset(dir.path, Split::test);
  for (std::size_t i = 0; i < first.size(); ++i) {
    CHECK(second[i].edge.data == first[i].edge.data);
    CHECK(first[i].edge.data == make_edge_map(first[i].mask).data);
  }
}

TEST_CASE("unmatched basenames are listed") {
  TempDir dir("unmatched");
  fs::create_directories(dir.path / "images");
  fs::create_directories(dir.path / "masks");
  std::ofstream(dir.path / "images" / "a.jpg") << "x";
  std::ofstream(dir.path / "masks" / "b.png") << "x";
  try {
    paired_ids(dir.path);
    FAIL("expected IoError");
  } catch (const IoError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("images/a.jpg") != std::string::npos);
    CHECK(msg.find("masks/b.png") != std::string::npos);
  }
}

TEST_CASE("synthesis is seeded and deterministic") {
  TempDir a("synth_a"), b("synth_b");
  SynthConfig cfg;
  cfg.image_size = 64;
  cfg.num_images = 8;
  cfg.seed = 7;
  CHECK(synthesize(cfg, a.path) == 8);
  synthesize(cfg, b.path);
  for (const char* sub : {"images", "masks", "edges"})
    for (const auto& e : fs::directory_iterator(a.path / sub))
      CHECK(slurp(e.path()) == slurp(b.path / sub / e.path().filename()));
  const auto samples = load_dataset(a.path, Split::test);
  CHECK(samples.size() == 8);
  for (const auto& s : samples) CHECK(s.edge.data == make_edge_map(s.mask).data);
}

TEST_CASE("synthesis without objects leaves empty masks") {
  TempDir dir("synth_empty");
  SynthConfig cfg;
  cfg.image_size = 32;
  cfg.num_images = 3;
  cfg.objects_min = 0;
  cfg.objects_max = 0;
  synthesize(cfg, dir.path);
  for (const auto& s : load_dataset(dir.path, Split::test)) {
    for (double v : s.mask.data) CHECK(v == 0.0);
    for (double v : s.edge.data) CHECK(v == 0.0);
  }
}

TEST_CASE("full contrast makes objects trivially separable") {
  TempDir dir("synth_contrast");
  SynthConfig cfg;
  cfg.image_size = 64;
  cfg.num_images = 6;
  cfg.contrast_delta = 1.0;
  synthesize(cfg, dir.path);
  for (const auto& s : load_dataset(dir.path, Split::test)) {
    double in = 0, out = 0;
    int nin = 0, nout = 0;
    for (int r = 0; r < s.mask.height; ++r)
      for (int c = 0; c < s.mask.width; ++c) {
        double v = 0;
        for (int ch = 0; ch < 3; ++ch) v += s.image(r, c, ch) / 3.0;
        if (s.mask(r, c) > 0.5) {
          in += v;
          ++nin;
        } else {
          out += v;
          ++nout;
        }
      }
    REQUIRE(nin > 0);
    CHECK(in / nin - out / nout >= 0.5 * 255);
  }
}
