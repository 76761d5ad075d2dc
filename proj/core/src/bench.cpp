#include "llmseg/bench.hpp"

#include <algorithm>
#include <atomic>
#include <mutex>
#include <sstream>
#include <thread>

#include <fmt/format.h>

#include "llmseg/error.hpp"
#include "llmseg/image_io.hpp"
#include "llmseg/pipeline.hpp"
#include "llmseg/util.hpp"

namespace llmseg {

namespace fs = std::filesystem;
using nlohmann::json;

DatasetSpec DatasetSpec::from_config(const RunConfig& config) {
  DatasetSpec d;
  d.images_dir = config.images_dir;
  d.masks_dir = config.masks_dir;
  d.split_file = config.split_file;
  if (!config.class_list.empty()) {
    d.class_list = read_class_list(config.class_list);
  } else {
    d.class_list.push_back("background");
    d.class_list.insert(d.class_list.end(), config.classes.begin(), config.classes.end());
  }
  if (d.class_list.size() < 2) fail(ErrorCode::Config, "dataset needs at least one foreground class");
  return d;
}

std::vector<std::string> DatasetSpec::sample_ids() const {
  std::vector<std::string> ids;
  if (!split_file.empty()) {
    std::istringstream in(read_file(split_file));
    std::string line;
    while (std::getline(in, line)) {
      auto id = trim(line);
      if (!id.empty()) ids.push_back(std::move(id));
    }
    return ids;
  }
  if (!fs::is_directory(images_dir)) fail(ErrorCode::MissingInput, fmt::format("no images directory {}", images_dir.string()));
  for (const auto& entry : fs::directory_iterator(images_dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") ids.push_back(entry.path().stem().string());
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::optional<double> ClassCounts::iou() const {
  const auto denom = tp + fp + fn;
  if (denom == 0) return std::nullopt;
  return static_cast<double>(tp) / static_cast<double>(denom);
}

Confusion::Confusion(std::size_t num_classes, std::uint8_t ignore_index) : counts_(num_classes), ignore_(ignore_index) {
  if (num_classes == 0 || num_classes > kIgnoreLabel) fail(ErrorCode::InvalidArgument, "class count must be in 1..255");
}

void Confusion::accumulate(const LabelMap& pred, const LabelMap& gt) {
  if (pred.height != gt.height || pred.width != gt.width) {
    fail(ErrorCode::ShapeMismatch,
         fmt::format("prediction is {}x{}, ground truth {}x{}", pred.height, pred.width, gt.height, gt.width));
  }
  const std::size_t L = counts_.size();
  for (std::size_t i = 0; i < gt.labels.size(); ++i) {
    const auto g = gt.labels[i];
    if (g == ignore_) continue;
    if (g >= L) fail(ErrorCode::Format, fmt::format("ground-truth label {} outside 0..{}", g, L - 1));
    const auto p = pred.labels[i];
    ++evaluated_;
    if (p == g) {
      ++counts_[g].tp;
      continue;
    }
    ++counts_[g].fn;
    if (p < L) {
      ++counts_[p].fp;
    } else if (p != ignore_) {
      fail(ErrorCode::Format, fmt::format("predicted label {} outside 0..{}", p, L - 1));
    }
  }
}

void Confusion::merge(const Confusion& other) {
  if (other.counts_.size() != counts_.size()) fail(ErrorCode::ShapeMismatch, "cannot merge confusions of different size");
  for (std::size_t c = 0; c < counts_.size(); ++c) {
    counts_[c].tp += other.counts_[c].tp;
    counts_[c].fp += other.counts_[c].fp;
    counts_[c].fn += other.counts_[c].fn;
  }
  evaluated_ += other.evaluated_;
}

SegReport make_report(const Confusion& confusion, std::vector<std::string> class_names, std::string config_hash) {
  if (class_names.size() != confusion.counts().size()) {
    fail(ErrorCode::ShapeMismatch, "class names and confusion size differ");
  }
  SegReport r;
  r.class_names = std::move(class_names);
  r.counts = confusion.counts();
  r.config_hash = std::move(config_hash);
  r.empty = confusion.evaluated_pixels() == 0;
  double sum = 0.0, sum_fg = 0.0;
  std::size_t n = 0, n_fg = 0;
  for (std::size_t c = 0; c < r.counts.size(); ++c) {
    const auto iou = r.counts[c].iou();
    r.iou.push_back(iou);
    if (!iou) continue;
    sum += *iou;
    ++n;
    if (c > 0) {
      sum_fg += *iou;
      ++n_fg;
    }
  }
  r.miou = n > 0 ? sum / static_cast<double>(n) : 0.0;
  r.miou_foreground = n_fg > 0 ? sum_fg / static_cast<double>(n_fg) : 0.0;
  return r;
}

std::string report_csv(const SegReport& report) {
  std::string out = "class,tp,fp,fn,iou\n";
  for (std::size_t c = 0; c < report.counts.size(); ++c) {
    const auto& k = report.counts[c];
    out += fmt::format("{},{},{},{},{}\n", report.class_names[c], k.tp, k.fp, k.fn,
                       report.iou[c] ? fmt::format("{}", *report.iou[c]) : std::string());
  }
  out += report.empty ? "miou,,,,\n" : fmt::format("miou,,,,{}\n", report.miou);
  return out;
}

std::string report_table(const SegReport& report) {
  std::string out = fmt::format("{:<20} {:>12} {:>12} {:>12} {:>8}\n", "class", "tp", "fp", "fn", "IoU%");
  for (std::size_t c = 0; c < report.counts.size(); ++c) {
    const auto& k = report.counts[c];
    out += fmt::format("{:<20} {:>12} {:>12} {:>12} {:>8}\n", report.class_names[c], k.tp, k.fp, k.fn,
                       report.iou[c] ? fmt::format("{:.2f}", 100.0 * *report.iou[c]) : std::string("-"));
  }
  if (report.empty) {
    out += "empty evaluation: no labelled pixels\n";
  } else {
    out += fmt::format("mIoU (with background)    {:.2f}\n", 100.0 * report.miou);
    out += fmt::format("mIoU (foreground classes) {:.2f}\n", 100.0 * report.miou_foreground);
  }
  if (!report.config_hash.empty()) out += fmt::format("config {}\n", report.config_hash);
  return out;
}

json report_json(const SegReport& report) {
  json classes = json::array();
  for (std::size_t c = 0; c < report.counts.size(); ++c) {
    const auto& k = report.counts[c];
    classes.push_back({{"class", report.class_names[c]},
                       {"tp", k.tp},
                       {"fp", k.fp},
                       {"fn", k.fn},
                       {"iou", report.iou[c] ? json(*report.iou[c]) : json(nullptr)}});
  }
  return {{"classes", classes},
          {"miou", report.miou},
          {"miou_foreground", report.miou_foreground},
          {"empty", report.empty},
          {"images", report.images},
          {"config_hash", report.config_hash}};
}

namespace {

std::string enumerate(const std::vector<std::pair<std::string, std::string>>& problems) {
  std::string out;
  for (const auto& [id, msg] : problems) out += fmt::format("\n  {}: {}", id, msg);
  return out;
}

void write_outputs(const BenchmarkOutputs& outputs, const RunConfig& config, std::span<const SubclassSet> sets,
                   const SegReport& report) {
  if (outputs.run_dir.empty()) return;
  fs::create_directories(outputs.run_dir);
  atomic_write_file(outputs.run_dir / "config.json", to_json(config).dump(2) + "\n");
  json s = json::array();
  for (const auto& set : sets) s.push_back(to_json(set));
  atomic_write_file(outputs.run_dir / "subclasses.json", s.dump(2) + "\n");
  atomic_write_file(outputs.run_dir / "report.csv", report_csv(report));
  atomic_write_file(outputs.run_dir / "report.txt", report_table(report));
  atomic_write_file(outputs.run_dir / "report.json", report_json(report).dump(2) + "\n");
}

}  // namespace

SegReport run_benchmark(const DatasetSpec& dataset, const RunConfig& config, FeatureSource& features,
                        const BenchmarkOutputs& outputs) {
  config.validate();
  const auto ids = dataset.sample_ids();
  if (ids.empty()) fail(ErrorCode::MissingInput, "split has no samples");

  // Cheap existence checks up front, so a broken dataset fails before compute.
  std::vector<std::pair<std::string, std::string>> missing;
  const auto* files = dynamic_cast<const FileFeatureSource*>(&features);
  for (const auto& id : ids) {
    if (!fs::exists(dataset.image_path(id))) missing.emplace_back(id, "missing image " + dataset.image_path(id).string());
    if (!fs::exists(dataset.mask_path(id))) missing.emplace_back(id, "missing mask " + dataset.mask_path(id).string());
    if (files != nullptr) {
      const auto p = FileFeatureSource::image_path(files->dir(), id);
      if (!fs::exists(p)) missing.emplace_back(id, "missing image features " + p.string());
    }
  }
  if (!missing.empty()) {
    fail(ErrorCode::MissingInput, fmt::format("{} missing input(s):{}", missing.size(), enumerate(missing)));
  }

  const std::vector<std::string> fg(dataset.class_list.begin() + 1, dataset.class_list.end());
  const auto sets = load_subclass_sets(fg, config.subclass_dir_for(config.prompt_mode));
  const auto templates = resolve_templates(config);
  const auto classes = build_class_descriptors(sets, templates, features, config);
  if (!outputs.predictions_dir.empty()) fs::create_directories(outputs.predictions_dir);

  const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(config.workers, ids.size()));
  std::vector<Confusion> partial(workers, Confusion(dataset.class_list.size(), dataset.ignore_index));
  std::vector<std::pair<std::string, std::string>> failures;
  std::mutex failures_mutex;
  std::atomic<std::size_t> next{0};

  auto work = [&](unsigned w) {
    for (std::size_t i = next++; i < ids.size(); i = next++) {
      const auto& id = ids[i];
      try {
        const auto image = read_png_rgb(dataset.image_path(id));
        const auto gt = read_label_png(dataset.mask_path(id));
        const auto feats = features.image_features(dataset.image_path(id), id);
        auto seg = segment_image(feats, image, classes, config);
        partial[w].accumulate(seg.labels, gt);
        if (!outputs.predictions_dir.empty()) write_label_png(outputs.predictions_dir / (id + ".png"), seg.labels);
      } catch (const std::exception& e) {
        std::lock_guard lock(failures_mutex);
        failures.emplace_back(id, e.what());
      }
    }
  };
  if (workers <= 1) {
    work(0);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work, w);
  }
  if (!failures.empty()) {
    std::sort(failures.begin(), failures.end());
    fail(ErrorCode::MissingInput, fmt::format("{} of {} sample(s) failed:{}", failures.size(), ids.size(), enumerate(failures)));
  }

  Confusion total(dataset.class_list.size(), dataset.ignore_index);
  for (const auto& p : partial) total.merge(p);
  auto report = make_report(total, dataset.class_list, config_hash(config));
  report.images = ids.size();
  write_outputs(outputs, config, sets, report);
  return report;
}

SegReport evaluate_dirs(const fs::path& pred_dir, const fs::path& gt_dir, std::vector<std::string> class_list,
                        std::uint8_t ignore_index) {
  if (!fs::is_directory(gt_dir)) fail(ErrorCode::MissingInput, fmt::format("no ground-truth directory {}", gt_dir.string()));
  std::vector<fs::path> names;
  for (const auto& entry : fs::directory_iterator(gt_dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") names.push_back(entry.path().filename());
  }
  std::sort(names.begin(), names.end());
  std::vector<std::pair<std::string, std::string>> missing;
  for (const auto& n : names) {
    if (!fs::exists(pred_dir / n)) missing.emplace_back(n.string(), "no prediction in " + pred_dir.string());
  }
  if (!missing.empty()) {
    fail(ErrorCode::MissingInput, fmt::format("{} prediction(s) missing:{}", missing.size(), enumerate(missing)));
  }
  Confusion c(class_list.size(), ignore_index);
  for (const auto& n : names) c.accumulate(read_label_png(pred_dir / n), read_label_png(gt_dir / n));
  auto report = make_report(c, std::move(class_list));
  report.images = names.size();
  return report;
}

std::string_view to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::Lambda: return "lambda";
    case SweepAxis::NSubclasses: return "n_subclasses";
    case SweepAxis::Template: return "template";
    case SweepAxis::EnsembleMethod: return "ensemble_method";
    case SweepAxis::PromptMode: return "prompt_mode";
  }
  return "unknown";
}

SweepAxis parse_sweep_axis(std::string_view text) {
  const auto t = to_lower(trim(text));
  if (t == "n") return SweepAxis::NSubclasses;
  if (t == "method") return SweepAxis::EnsembleMethod;
  for (auto a : {SweepAxis::Lambda, SweepAxis::NSubclasses, SweepAxis::Template, SweepAxis::EnsembleMethod,
                 SweepAxis::PromptMode}) {
    if (t == to_string(a)) return a;
  }
  fail(ErrorCode::Config, fmt::format("unknown sweep axis '{}'", text));
}

namespace {

double parse_number(const std::string& s) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    fail(ErrorCode::Config, fmt::format("'{}' is not a number", s));
  }
}

}  // namespace

Sweep parse_sweep(std::string_view text) {
  const auto eq = text.find('=');
  if (eq == std::string_view::npos) fail(ErrorCode::Config, fmt::format("sweep '{}' must look like axis=values", text));
  Sweep s{parse_sweep_axis(text.substr(0, eq)), {}};
  const auto rhs = trim(text.substr(eq + 1));
  const bool numeric = s.axis == SweepAxis::Lambda || s.axis == SweepAxis::NSubclasses;
  if (numeric && rhs.find(':') != std::string::npos) {
    const auto parts = split(rhs, ':');
    if (parts.size() != 3) fail(ErrorCode::Config, fmt::format("range '{}' must be start:stop:step", rhs));
    const double start = parse_number(trim(parts[0])), stop = parse_number(trim(parts[1])),
                 step = parse_number(trim(parts[2]));
    if (!(step > 0.0) || stop < start) fail(ErrorCode::Config, fmt::format("bad range '{}'", rhs));
    const auto count = static_cast<std::size_t>((stop - start) / step + 1e-9) + 1;
    for (std::size_t i = 0; i < count; ++i) {
      s.values.push_back(fmt::format("{:.6g}", start + static_cast<double>(i) * step));
    }
  } else {
    for (const auto& v : split(rhs, ',')) {
      auto t = trim(v);
      if (t.empty()) fail(ErrorCode::Config, fmt::format("empty value in sweep '{}'", text));
      s.values.push_back(std::move(t));
    }
  }
  if (s.values.empty()) fail(ErrorCode::Config, "sweep has no values");
  for (const auto& v : s.values) apply_sweep_value(RunConfig{}, s.axis, v);  // reject bad values early
  return s;
}

RunConfig apply_sweep_value(const RunConfig& config, SweepAxis axis, const std::string& value) {
  RunConfig c = config;
  try {
    switch (axis) {
      case SweepAxis::Lambda:
        c.ensemble.lambda_super = parse_number(value);
        c.score_source = ScoreSource::Mixed;
        break;
      case SweepAxis::NSubclasses: {
        const double n = parse_number(value);
        if (n < 1 || n != static_cast<double>(static_cast<std::size_t>(n))) {
          fail(ErrorCode::Config, fmt::format("n_subclasses '{}' must be a positive integer", value));
        }
        c.n_subclasses = static_cast<std::size_t>(n);
        break;
      }
      case SweepAxis::Template:
        c.templates.clear();
        for (const auto& id : split(value, '+')) c.templates.push_back(trim(id));
        select_templates(default_templates(), c.templates);
        break;
      case SweepAxis::EnsembleMethod:
        c.ensemble.method = parse_ensemble_method(value);
        break;
      case SweepAxis::PromptMode:
        c.prompt_mode = parse_prompt_mode(value);
        break;
    }
    c.validate();
  } catch (const Error& e) {
    if (e.code() == ErrorCode::Config) throw;
    fail(ErrorCode::Config, e.what());
  }
  return c;
}

std::vector<AblationRow> ablate(const Sweep& sweep, const DatasetSpec& dataset, const RunConfig& config,
                                FeatureSource& features, const fs::path& run_dir) {
  std::vector<AblationRow> rows;
  for (const auto& value : sweep.values) {
    const auto c = apply_sweep_value(config, sweep.axis, value);
    BenchmarkOutputs out;
    if (!run_dir.empty()) out.run_dir = run_dir / slugify(fmt::format("{}_{}", to_string(sweep.axis), value));
    rows.push_back({value, run_benchmark(dataset, c, features, out)});
  }
  return rows;
}

std::string ablation_csv(SweepAxis axis, const std::vector<AblationRow>& rows) {
  std::string out = "axis,value,miou,miou_foreground,config_hash,note\n";
  for (const auto& r : rows) {
    std::string note;
    if (axis == SweepAxis::EnsembleMethod && parse_ensemble_method(r.value) == EnsembleMethod::CrossAttention) {
      note = "stand-in definition";
    }
    if (r.report.empty) note = "empty evaluation";
    out += fmt::format("{},{},{},{},{},{}\n", to_string(axis), r.value, r.report.miou, r.report.miou_foreground,
                       r.report.config_hash, note);
  }
  return out;
}

}  // namespace llmseg
