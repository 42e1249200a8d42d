// Renders one synthetic tile per style, then writes a small gallery of
// every normalization in the library: gray, Reinhard, Macenko, histogram
// specification. No training involved; runs in well under a second.
//
//   ./baseline_gallery [out_dir]

#include <filesystem>
#include <iostream>

#include "sst/colorops.hpp"
#include "sst/manifest.hpp"
#include "sst/synth.hpp"

using namespace sst;

int main(int argc, char** argv) {
  const std::string out = argc > 1 ? argv[1] : "gallery";
  std::filesystem::create_directories(out);

  // a style-A target set and one style-B tile to normalize toward it
  Dataset target;
  for (int i = 0; i < 32; ++i) target.tiles.push_back(synth_tile(default_style_a(), i % 2, 64, 100 + i));
  const ColorTile src = synth_tile(default_style_b(), 1, 64, 7).tile;

  write_png_rgb8(out + "/source_style_b.png", src);
  write_png_rgb8(out + "/target_style_a.png", target.tiles[1].tile);

  const GrayTile gray = to_gray(src);
  ColorTile gray_rgb(src.d);
  for (int y = 0; y < src.d; ++y)
    for (int x = 0; x < src.d; ++x)
      for (int c = 0; c < 3; ++c) gray_rgb.at(c, y, x) = gray.at(y, x);
  write_png_rgb8(out + "/gray.png", gray_rgb);

  write_png_rgb8(out + "/reinhard.png", reinhard_normalize(src, fit_reinhard_stats(target)));
  write_png_rgb8(out + "/macenko.png", macenko_normalize(src, fit_stain_matrix(target)));
  write_png_rgb8(out + "/hs.png", histogram_specification(src, fit_histograms(target)));

  std::cout << "wrote 6 tiles to " << out << "/\n";
  return 0;
}
