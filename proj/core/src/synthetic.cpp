#include "llmseg/synthetic.hpp"

#include <array>
#include <random>

#include <fmt/format.h>

#include "llmseg/error.hpp"
#include "llmseg/features.hpp"
#include "llmseg/image_io.hpp"
#include "llmseg/subclass_gen.hpp"
#include "llmseg/templates.hpp"
#include "llmseg/util.hpp"

namespace llmseg {

namespace fs = std::filesystem;

namespace {

struct Rect {
  std::size_t r0, c0, h, w;
};

bool near(const Rect& a, const Rect& b) {
  // One free patch between rectangles keeps the two score maps apart.
  return a.r0 < b.r0 + b.h + 1 && b.r0 < a.r0 + a.h + 1 && a.c0 < b.c0 + b.w + 1 && b.c0 < a.c0 + a.w + 1;
}

class Builder {
 public:
  explicit Builder(const SyntheticSpec& spec) : spec_(spec), rng_(spec.seed) {
    const auto d = static_cast<Eigen::Index>(spec.dim);
    background_ = Vector::Zero(d);
    for (auto j = static_cast<Eigen::Index>(spec.classes.size()); j < d; ++j) background_(j) = 1.0;
    background_.normalize();
  }

  Vector axis(std::size_t c) const {
    Vector v = Vector::Zero(static_cast<Eigen::Index>(spec_.dim));
    v(static_cast<Eigen::Index>(c)) = 1.0;
    return v;
  }

  Vector noise(double bound) {
    std::uniform_real_distribution<double> u(-bound, bound);
    Vector v(static_cast<Eigen::Index>(spec_.dim));
    for (auto& x : v) x = u(rng_);
    return v;
  }

  // token 0 carries the descriptor; every other token is strictly below it
  // in every channel, so the per-channel maximum recovers token 0.
  Matrix tokens_for(const Vector& descriptor) {
    std::uniform_real_distribution<double> gap(0.01, 0.3);
    Matrix t(static_cast<Eigen::Index>(spec_.tokens), descriptor.size());
    const Vector top = descriptor + noise(0.02);
    t.row(0) = top.transpose();
    for (Eigen::Index k = 1; k < t.rows(); ++k) {
      for (Eigen::Index j = 0; j < t.cols(); ++j) t(k, j) = top(j) - gap(rng_);
    }
    return t;
  }

  std::vector<Rect> place(std::size_t count) {
    const std::size_t g = spec_.grid;
    const std::size_t lo = std::min<std::size_t>(6, g), hi = std::min<std::size_t>(8, g);
    std::uniform_int_distribution<std::size_t> side(lo, hi);
    for (int attempt = 0; attempt < 10000; ++attempt) {
      std::vector<Rect> rects;
      bool ok = true;
      for (std::size_t c = 0; c < count && ok; ++c) {
        Rect r{0, 0, side(rng_), side(rng_)};
        r.r0 = std::uniform_int_distribution<std::size_t>(0, g - r.h)(rng_);
        r.c0 = std::uniform_int_distribution<std::size_t>(0, g - r.w)(rng_);
        for (const auto& o : rects) ok = ok && !near(r, o);
        rects.push_back(r);
      }
      if (ok) return rects;
    }
    fail(ErrorCode::InvalidArgument, "synthetic grid too small for the planted regions");
  }

  const Vector& background() const { return background_; }
  std::mt19937_64& rng() { return rng_; }

 private:
  const SyntheticSpec& spec_;
  std::mt19937_64 rng_;
  Vector background_;
};

std::array<std::uint8_t, 3> region_color(std::size_t label) {
  static constexpr std::array<std::array<std::uint8_t, 3>, 4> kColors = {
      {{50, 90, 150}, {200, 60, 50}, {60, 170, 80}, {230, 200, 40}}};
  if (label < kColors.size()) return kColors[label];
  return palette_color(static_cast<std::uint8_t>(label));
}

}  // namespace

SyntheticDataset write_synthetic_dataset(const fs::path& root_in, const SyntheticSpec& spec) {
  const std::size_t C = spec.classes.size();
  if (C == 0 || spec.dim <= C) fail(ErrorCode::InvalidArgument, "synthetic dim must exceed the class count");
  if (spec.distractors > spec.n_subclasses / 2) fail(ErrorCode::InvalidArgument, "at most half the subclasses may be distractors");
  if (spec.tokens == 0 || spec.images == 0 || spec.grid == 0 || spec.patch_px == 0) {
    fail(ErrorCode::InvalidArgument, "synthetic sizes must be positive");
  }
  const fs::path root = fs::absolute(root_in);
  Builder b(spec);

  SyntheticDataset out;
  out.root = root;
  auto& cfg = out.config;
  cfg.images_dir = root / "images";
  cfg.masks_dir = root / "masks";
  cfg.split_file = root / "split.txt";
  cfg.class_list = root / "classes.txt";
  cfg.subclasses_dir = root / "subclasses";
  cfg.features_dir = root / "features";
  cfg.cache_dir = root / "cache";
  cfg.feature_mode = FeatureMode::Files;
  cfg.n_subclasses = spec.n_subclasses;
  cfg.resize = {spec.grid * spec.patch_px, spec.grid * spec.patch_px};
  for (const auto& dir : {cfg.images_dir, cfg.masks_dir, cfg.subclasses_dir, cfg.features_dir}) fs::create_directories(dir);

  std::string class_list = "background\n";
  for (const auto& c : spec.classes) class_list += c + "\n";
  atomic_write_file(cfg.class_list, class_list);

  // Text side: every (name, template) pair gets its own token block.
  const auto& templates = default_templates();
  auto write_prompts = [&](const std::string& name, const Vector& descriptor) {
    for (const auto& t : templates) FileFeatureSource::write_text(cfg.features_dir, expand(t, name), b.tokens_for(descriptor));
  };
  for (std::size_t c = 0; c < C; ++c) {
    const auto& name = spec.classes[c];
    write_prompts(name, (b.axis(c) + spec.superclass_background * b.background()).normalized());

    SubclassSet set;
    set.superclass = name;
    set.n = spec.n_subclasses;
    set.model_id = "synthetic";
    std::size_t placed = 0;
    for (std::size_t i = 0; i < spec.n_subclasses; ++i) {
      const bool distractor = i % 2 == 1 && placed < spec.distractors;
      std::string sub = fmt::format("{} {} {}", name, distractor ? "scene" : "kind", i + 1);
      Vector v = distractor ? Vector(0.5 * b.axis(c) + b.background()) : Vector(b.axis(c) + b.noise(spec.subclass_noise));
      placed += distractor ? 1 : 0;
      write_prompts(sub, v.normalized());
      set.subclasses.push_back(std::move(sub));
    }
    save_subclass_set(cfg.subclasses_dir / (slugify(name) + ".json"), set);
  }

  // Image side.
  const std::size_t g = spec.grid, px = spec.patch_px, side = g * px;
  std::string split;
  for (std::size_t n = 0; n < spec.images; ++n) {
    const std::string id = fmt::format("img{:03}", n);
    split += id + "\n";
    const auto rects = b.place(C);
    std::vector<std::uint8_t> patch_label(g * g, 0);
    for (std::size_t c = 0; c < C; ++c) {
      const auto& r = rects[c];
      for (std::size_t y = r.r0; y < r.r0 + r.h; ++y) {
        for (std::size_t x = r.c0; x < r.c0 + r.w; ++x) patch_label[y * g + x] = static_cast<std::uint8_t>(c + 1);
      }
    }

    PatchImageFeatures f;
    f.grid = {g, g};
    f.source_image_id = id;
    f.source_size = {side, side};
    f.values.resize(static_cast<Eigen::Index>(g * g), static_cast<Eigen::Index>(spec.dim));
    for (std::size_t p = 0; p < g * g; ++p) {
      const Vector base = patch_label[p] == 0 ? b.background() : b.axis(patch_label[p] - 1u);
      f.values.row(static_cast<Eigen::Index>(p)) = (base + b.noise(spec.patch_noise)).transpose();
    }
    FileFeatureSource::write_image(cfg.features_dir, id, f);

    RgbImage image(side, side);
    LabelMap mask(side, side);
    for (std::size_t y = 0; y < side; ++y) {
      for (std::size_t x = 0; x < side; ++x) {
        const auto l = patch_label[(y / px) * g + x / px];
        mask.at(y, x) = l;
        const auto color = region_color(l);
        std::copy(color.begin(), color.end(), image.at(y, x));
      }
    }
    write_png_rgb(cfg.images_dir / (id + ".png"), image);
    write_label_png(cfg.masks_dir / (id + ".png"), mask);
  }
  atomic_write_file(cfg.split_file, split);
  atomic_write_file(root / "config.json", to_json(cfg).dump(2) + "\n");

  out.dataset = DatasetSpec::from_config(cfg);
  return out;
}

}  // namespace llmseg
