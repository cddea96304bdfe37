// Synthetic dataset generator. Writes the raw u8 C*H*W-per-image format the
// main tool consumes, plus an optional PPM contact sheet for eyeballing.
#include <algorithm>
#include <cstdio>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "cdraw/analysis.h"
#include "cdraw/binio.h"
#include "cdraw/dataset.h"
#include "cdraw/error.h"
#include "cdraw/synthdata.h"

namespace {

void write_dataset(const cdraw::Dataset& ds, const std::string& path,
                   const std::string& preview) {
  std::string raw(ds.bytes.begin(), ds.bytes.end());
  cdraw::write_file_bytes(path, raw);
  std::printf("wrote %d images (%dx%dx%d, %zu bytes) to %s\n", ds.count, ds.c,
              ds.h, ds.w, raw.size(), path.c_str());
  if (preview.empty()) return;
  const int n = std::min(ds.count, 64);
  const auto all = cdraw::dataset_images<float>(ds, 0, n);
  std::vector<cdraw::Tensor4<float>> rows;
  const size_t img = all.size() / all.n;
  for (int first = 0; first < n; first += 8) {
    const int k = std::min(8, n - first);
    cdraw::Tensor4<float> row(k, all.c, all.h, all.w);
    std::copy_n(&all.data[img * first], img * k, row.data.begin());
    rows.push_back(std::move(row));
  }
  cdraw::emit_grid(rows, preview);
  std::printf("wrote preview %s\n", preview.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"synthetic dataset generator"};
  app.require_subcommand(1);

  int count = 1000, size = 28, alphabet = 24, channels = 1;
  uint64_t seed = 7;
  std::string out_path, preview;

  auto* glyphs =
      app.add_subcommand("glyphs", "binary stroke characters (values 0/255)");
  glyphs->add_option("--count", count, "images")->capture_default_str();
  glyphs->add_option("--size", size, "side length")->capture_default_str();
  glyphs->add_option("--alphabet", alphabet, "distinct prototypes")
      ->capture_default_str();
  glyphs->add_option("--seed", seed, "generator seed")->capture_default_str();
  glyphs->add_option("--preview", preview, "optional PPM contact sheet");
  glyphs->add_option("out", out_path, "output file")->required();

  auto* blobs =
      app.add_subcommand("blobs", "smooth shaded images with Gaussian bumps");
  blobs->add_option("--count", count, "images")->capture_default_str();
  blobs->add_option("--size", size, "side length")->capture_default_str();
  blobs->add_option("--channels", channels, "image channels")
      ->capture_default_str();
  blobs->add_option("--seed", seed, "generator seed")->capture_default_str();
  blobs->add_option("--preview", preview, "optional PPM contact sheet");
  blobs->add_option("out", out_path, "output file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (app.got_subcommand(glyphs)) {
      write_dataset(cdraw::make_glyph_dataset(count, size, alphabet, seed),
                    out_path, preview);
    } else {
      write_dataset(cdraw::make_blob_dataset(count, channels, size, seed),
                    out_path, preview);
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
