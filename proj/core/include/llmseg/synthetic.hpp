#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "llmseg/bench.hpp"
#include "llmseg/config.hpp"

namespace llmseg {

/// A planted-ground-truth benchmark with hand-built features.
///
/// Channels 0..C-1 are the class directions; the remaining channels hold a
/// diffuse background direction. Class regions are axis-aligned rectangles on
/// the patch grid, so the pixel ground truth is exactly patch-aligned.
struct SyntheticSpec {
  std::size_t images = 4;
  std::size_t grid = 18;      // patches per side
  std::size_t patch_px = 4;   // pixels per patch side
  std::size_t dim = 16;
  std::vector<std::string> classes = {"cat", "dog"};
  std::size_t n_subclasses = 10;
  std::size_t distractors = 0;         // subclasses leaning towards the background direction
  double subclass_noise = 0.1;         // bound of the per-channel noise on clean subclasses
  double patch_noise = 0.03;           // bound of the per-channel noise on patches
  double superclass_background = 0.0;  // background share mixed into the superclass descriptor
  std::size_t tokens = 4;              // text tokens per prompt
  std::uint64_t seed = 7;
};

struct SyntheticDataset {
  std::filesystem::path root;
  RunConfig config;  // files mode, working resolution = image size
  DatasetSpec dataset;
};

/// Writes images/, masks/, features/, subclasses/, classes.txt, split.txt and
/// config.json under `root`. Same spec, same bytes.
SyntheticDataset write_synthetic_dataset(const std::filesystem::path& root, const SyntheticSpec& spec);

}  // namespace llmseg
