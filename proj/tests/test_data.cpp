#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "sst/manifest.hpp"
#include "sst/png_io.hpp"
#include "sst/synth.hpp"

namespace fs = std::filesystem;
using namespace sst;

namespace {

// Scratch directory removed on scope exit.
struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("sst_test_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

std::array<double, 3> channel_means(const StainStyleParams& style, int n, int d, std::uint64_t seed) {
  std::array<double, 3> m{0, 0, 0};
  const std::size_t plane = static_cast<std::size_t>(d) * d;
  for (int i = 0; i < n; ++i) {
    const LabeledTile t = synth_tile(style, i % 2, d, mix_seed(seed, 9, static_cast<std::uint64_t>(i)));
    for (int c = 0; c < 3; ++c) {
      double s = 0;
      for (std::size_t p = 0; p < plane; ++p) s += t.tile.pix[c * plane + p];
      m[static_cast<std::size_t>(c)] += s / static_cast<double>(plane) / n;
    }
  }
  return m;
}

}  // namespace

TEST_CASE("tile validation rejects malformed tiles") {
  ColorTile ok = ColorTile::filled(8, 0.2, 0.4, 0.6);
  REQUIRE_NOTHROW(validate_color_tile(ok));

  ColorTile odd = ColorTile::filled(12, 0.2, 0.4, 0.6);
  REQUIRE_THROWS_AS(validate_color_tile(odd), std::invalid_argument);

  ColorTile bad_range = ok;
  bad_range.pix[5] = 1.5;
  REQUIRE_THROWS_AS(validate_color_tile(bad_range), std::invalid_argument);

  ColorTile bad_nan = ok;
  bad_nan.pix[0] = std::numeric_limits<Real>::quiet_NaN();
  REQUIRE_THROWS_AS(validate_color_tile(bad_nan), std::invalid_argument);

  GrayTile g(8);
  std::fill(g.pix.begin(), g.pix.end(), 0.5);
  REQUIRE_NOTHROW(validate_gray_tile(g));
  g.pix[3] = -0.1;
  REQUIRE_THROWS_AS(validate_gray_tile(g), std::invalid_argument);
}

TEST_CASE("rendering follows the optical model") {
  const StainStyleParams style = default_style_a();

  SECTION("zero concentration renders pure background") {
    ConcentrationField conc(8);
    StainStyleParams clean = style;
    clean.noise_sigma = 0.0;
    const ColorTile t = render_stained(clean, conc, 0);
    for (Real v : t.pix) REQUIRE(v == Catch::Approx(clean.background_intensity).margin(1e-12));
  }

  SECTION("log transmission recovers the mixed optical densities") {
    StainStyleParams clean = style;
    clean.noise_sigma = 0.0;
    const int d = 16;
    const ConcentrationField conc = synth_concentrations(1, d, 77);
    const ColorTile t = render_stained(clean, conc, 0);
    const std::size_t plane = static_cast<std::size_t>(d) * d;
    for (int y = 0; y < d; ++y)
      for (int x = 0; x < d; ++x) {
        const Real c0 = conc.at(0, y, x) * clean.concentration_scale[0];
        const Real c1 = conc.at(1, y, x) * clean.concentration_scale[1];
        for (int ch = 0; ch < 3; ++ch) {
          const Real pix = t.pix[ch * plane + static_cast<std::size_t>(y) * d + x];
          const Real od = -std::log(pix / clean.background_intensity);
          const Real expect = clean.stain_matrix(ch, 0) * c0 + clean.stain_matrix(ch, 1) * c1;
          REQUIRE(od == Catch::Approx(expect).margin(1e-6));
        }
      }
  }
}

TEST_CASE("tile synthesis is a pure function of the seed") {
  const StainStyleParams style = default_style_a();
  const LabeledTile a = synth_tile(style, 1, 16, 1234);
  const LabeledTile b = synth_tile(style, 1, 16, 1234);
  REQUIRE(a.tile.pix == b.tile.pix);

  const LabeledTile c = synth_tile(style, 1, 16, 1235);
  REQUIRE(a.tile.pix != c.tile.pix);

  const LabeledTile d = synth_tile(style, 0, 16, 1234);
  REQUIRE(a.tile.pix != d.tile.pix);
}

TEST_CASE("default styles are far apart in color yet luma comparable") {
  const StainStyleParams a = default_style_a();
  const StainStyleParams b = default_style_b();
  REQUIRE_NOTHROW(a.validate());
  REQUIRE_NOTHROW(b.validate());

  for (int c = 0; c < 2; ++c) {
    const double cosang = a.stain_matrix.col(c).dot(b.stain_matrix.col(c));
    const double deg = std::acos(std::min(1.0, cosang)) * 180.0 / M_PI;
    REQUIRE(deg >= 15.0);
  }

  const int n = 200, d = 32;
  const auto ma = channel_means(a, n, d, 11);
  const auto mb = channel_means(b, n, d, 12);
  const auto ma2 = channel_means(a, n, d, 13);

  // Disjoint samples of one style agree; the two styles do not.
  double same = 0, cross = 0;
  for (int c = 0; c < 3; ++c) {
    same = std::max(same, std::abs(ma[static_cast<std::size_t>(c)] - ma2[static_cast<std::size_t>(c)]));
    cross = std::max(cross, std::abs(ma[static_cast<std::size_t>(c)] - mb[static_cast<std::size_t>(c)]));
  }
  REQUIRE(same <= 0.02);
  REQUIRE(cross >= 0.02);

  // Grayscale brightness stays comparable even though RGB shifts strongly.
  const double luma_a = 0.299 * ma[0] + 0.587 * ma[1] + 0.114 * ma[2];
  const double luma_b = 0.299 * mb[0] + 0.587 * mb[1] + 0.114 * mb[2];
  REQUIRE(std::abs(luma_a - luma_b) <= 0.06);
  REQUIRE(cross >= 2.0 * std::abs(luma_a - luma_b));
}

TEST_CASE("style parameters round trip through json") {
  const StainStyleParams a = default_style_a();
  const StainStyleParams back = StainStyleParams::from_json(a.to_json());
  REQUIRE(back.stain_matrix == a.stain_matrix);
  REQUIRE(back.concentration_scale == a.concentration_scale);
  REQUIRE(back.background_intensity == a.background_intensity);
  REQUIRE(back.noise_sigma == a.noise_sigma);

  SECTION("invariant violations are rejected") {
    StainStyleParams bad = a;
    bad.stain_matrix(0, 0) *= 2.0;
    REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);

    bad = a;
    bad.stain_matrix.col(1) = bad.stain_matrix.col(0);
    REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);

    bad = a;
    bad.concentration_scale[0] = 0.0;
    REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);

    bad = a;
    bad.background_intensity = 0.5;
    REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);

    bad = a;
    bad.noise_sigma = -0.1;
    REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);

    nlohmann::json j = a.to_json();
    j["stain_matrix"] = {1.0, 0.0, 0.0};
    REQUIRE_THROWS_AS(StainStyleParams::from_json(j), std::invalid_argument);
  }
}

TEST_CASE("png io round trips within quantization") {
  TempDir tmp("png");
  const LabeledTile t = synth_tile(default_style_a(), 1, 16, 99);
  const fs::path p = tmp.path / "t.png";
  write_png_rgb8(p.string(), t.tile);
  const ColorTile back = read_png_rgb8(p.string());
  REQUIRE(back.d == 16);
  for (std::size_t i = 0; i < t.tile.pix.size(); ++i) {
    REQUIRE(std::abs(back.pix[i] - t.tile.pix[i]) <= 0.5 / 255.0 + 1e-12);
    // Decoded values sit exactly on the 8-bit grid.
    REQUIRE(back.pix[i] * 255.0 == Catch::Approx(std::round(back.pix[i] * 255.0)).margin(1e-9));
  }

  write_text(tmp.path / "junk.png", "this is not a png");
  REQUIRE_THROWS_AS(read_png_rgb8((tmp.path / "junk.png").string()), std::runtime_error);
  REQUIRE_THROWS_AS(read_png_rgb8((tmp.path / "missing.png").string()), std::runtime_error);
}

TEST_CASE("manifest loading names the offending row") {
  TempDir tmp("manifest");
  const fs::path dir = tmp.path;

  write_png_rgb8((dir / "a.png").string(), synth_tile(default_style_a(), 0, 16, 1).tile);
  write_png_rgb8((dir / "b.png").string(), synth_tile(default_style_a(), 1, 16, 2).tile);
  write_png_rgb8((dir / "big.png").string(), synth_tile(default_style_a(), 1, 32, 3).tile);

  SECTION("well formed manifest preserves order") {
    write_text(dir / "ok.csv", "path,label,institute\na.png,0,I0\nb.png,1,I1\n");
    const Dataset ds = load_manifest(dir / "ok.csv", Split::val);
    REQUIRE(ds.split == Split::val);
    REQUIRE(ds.tiles.size() == 2);
    REQUIRE(ds.tiles[0].label == 0);
    REQUIRE(ds.tiles[0].institute == "I0");
    REQUIRE(ds.tiles[1].label == 1);
    REQUIRE(ds.tiles[1].institute == "I1");
    REQUIRE(ds.tile_d() == 16);
    REQUIRE(ds.count(0) == 1);
    REQUIRE(ds.count(1) == 1);
  }

  SECTION("failures carry the one-based row index") {
    write_text(dir / "badlabel.csv", "path,label,institute\na.png,0,I0\nb.png,2,I0\n");
    REQUIRE_THROWS_WITH(load_manifest(dir / "badlabel.csv"),
                        Catch::Matchers::ContainsSubstring("row 2") &&
                            Catch::Matchers::ContainsSubstring("outside {0,1}"));

    write_text(dir / "missing.csv", "path,label,institute\nnope.png,0,I0\n");
    REQUIRE_THROWS_WITH(load_manifest(dir / "missing.csv"),
                        Catch::Matchers::ContainsSubstring("row 1") &&
                            Catch::Matchers::ContainsSubstring("nope.png"));

    write_text(dir / "fields.csv", "path,label,institute\na.png,0\n");
    REQUIRE_THROWS_WITH(load_manifest(dir / "fields.csv"),
                        Catch::Matchers::ContainsSubstring("expected 3 fields"));

    write_text(dir / "sizes.csv", "path,label,institute\na.png,0,I0\nbig.png,1,I0\n");
    REQUIRE_THROWS_WITH(load_manifest(dir / "sizes.csv"),
                        Catch::Matchers::ContainsSubstring("row 2") &&
                            Catch::Matchers::ContainsSubstring("differs"));
  }

  SECTION("degenerate manifests are rejected") {
    write_text(dir / "empty.csv", "path,label,institute\n");
    REQUIRE_THROWS_WITH(load_manifest(dir / "empty.csv"), Catch::Matchers::ContainsSubstring("empty"));

    write_text(dir / "header.csv", "tile,cls,site\na.png,0,I0\n");
    REQUIRE_THROWS_WITH(load_manifest(dir / "header.csv"), Catch::Matchers::ContainsSubstring("header"));

    REQUIRE_THROWS_WITH(load_manifest(dir / "absent.csv"), Catch::Matchers::ContainsSubstring("cannot open"));
  }
}

TEST_CASE("dataset save and reload preserves rows") {
  TempDir tmp("roundtrip");
  auto bench = make_synthetic_benchmark(default_style_a(), default_style_b(), 4, 2, 2, 16, 5);
  const fs::path manifest = save_dataset(tmp.path, "train", bench[0]);
  const Dataset back = load_manifest(manifest, Split::train);
  REQUIRE(back.tiles.size() == bench[0].tiles.size());
  for (std::size_t i = 0; i < back.tiles.size(); ++i) {
    REQUIRE(back.tiles[i].label == bench[0].tiles[i].label);
    REQUIRE(back.tiles[i].institute == bench[0].tiles[i].institute);
    for (std::size_t p = 0; p < back.tiles[i].tile.pix.size(); ++p)
      REQUIRE(std::abs(back.tiles[i].tile.pix[p] - bench[0].tiles[i].tile.pix[p]) <= 0.5 / 255.0 + 1e-12);
  }
}

TEST_CASE("benchmark datasets follow the split protocol") {
  auto bench = make_synthetic_benchmark(default_style_a(), default_style_b(), 4, 2, 6, 16, 5);

  REQUIRE(bench[0].split == Split::train);
  REQUIRE(bench[1].split == Split::val);
  REQUIRE(bench[2].split == Split::test);
  REQUIRE(bench[0].tiles.size() == 4);
  REQUIRE(bench[1].tiles.size() == 2);
  REQUIRE(bench[2].tiles.size() == 6);

  for (int s = 0; s < 3; ++s) {
    const Dataset& ds = bench[static_cast<std::size_t>(s)];
    REQUIRE_NOTHROW(ds.validate());
    REQUIRE(ds.count(0) == ds.tiles.size() / 2);
    REQUIRE(ds.count(1) == ds.tiles.size() / 2);
    for (const LabeledTile& t : ds.tiles) REQUIRE(t.institute == (s == 2 ? "B" : "A"));
  }

  // Same index, same seed: the test split still draws fresh layouts, not
  // recolored copies of the training ones.
  REQUIRE(bench[2].tiles[0].tile.pix != bench[0].tiles[0].tile.pix);

  REQUIRE_THROWS_AS(make_synthetic_benchmark(default_style_a(), default_style_b(), 3, 2, 2, 16, 5),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(make_synthetic_benchmark(default_style_a(), default_style_b(), 4, 0, 2, 16, 5),
                    std::invalid_argument);
}

TEST_CASE("benchmark generation is deterministic") {
  auto b1 = make_synthetic_benchmark(default_style_a(), default_style_b(), 4, 2, 2, 16, 42);
  auto b2 = make_synthetic_benchmark(default_style_a(), default_style_b(), 4, 2, 2, 16, 42);
  for (int s = 0; s < 3; ++s)
    for (std::size_t i = 0; i < b1[static_cast<std::size_t>(s)].tiles.size(); ++i)
      REQUIRE(b1[static_cast<std::size_t>(s)].tiles[i].tile.pix ==
              b2[static_cast<std::size_t>(s)].tiles[i].tile.pix);
}
