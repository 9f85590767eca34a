#include "ttv/augment.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <thread>

#include "ttv/errors.hpp"

namespace ttv {

namespace {

// Shortest round-trip representation so lineage magnitudes replay exactly.
std::string fmt_exact(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string sanitize_id(const std::string& s) {
  std::string out;
  for (char c : s) {
    out.push_back(std::isalnum(static_cast<unsigned char>(c)) ? c : '_');
  }
  return out;
}

}  // namespace

void AugmentationSpec::validate() const {
  auto prob_ok = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!prob_ok(crop_prob) || !prob_ok(rotate_prob) || !prob_ok(brightness_prob) ||
      !prob_ok(contrast_prob)) {
    throw ArgumentError("augmentation probabilities must be in [0, 1]");
  }
  if (crop_min_w <= 0 || crop_min_h <= 0) throw ArgumentError("crop floor must be positive");
  if (rotate_min_deg > rotate_max_deg || brightness_min > brightness_max ||
      contrast_min > contrast_max) {
    throw ArgumentError("augmentation bounds inverted");
  }
  if (passes_per_image < 1) throw ArgumentError("passes_per_image must be >= 1");
}

AugmentationSpec AugmentationSpec::scaled_to(int frame_w, int frame_h) const {
  AugmentationSpec s = *this;
  s.crop_min_w = std::max(1, static_cast<int>(std::lround(frame_w * (560.0 / 1280.0))));
  s.crop_min_h = std::max(1, static_cast<int>(std::lround(frame_h * (560.0 / 720.0))));
  return s;
}

AugmentResult augment_once(const RasterFrame& frame, const AugmentationSpec& spec, Rng& rng) {
  spec.validate();
  if (frame.width < spec.crop_min_w || frame.height < spec.crop_min_h) {
    throw ArgumentError("frame smaller than crop floor");
  }

  AugmentResult result;
  RasterFrame work = frame;

  // Decision draws happen unconditionally and in a fixed order so that one
  // rng stream yields the same action sequence regardless of outcomes.
  const bool do_crop = rng.bernoulli(spec.crop_prob);
  if (do_crop) {
    const int cw = rng.uniform_int(spec.crop_min_w, frame.width);
    const int ch = rng.uniform_int(spec.crop_min_h, frame.height);
    const int x0 = rng.uniform_int(0, frame.width - cw);
    const int y0 = rng.uniform_int(0, frame.height - ch);
    work = crop(work, x0, y0, cw, ch);
    result.actions.push_back({"crop", std::to_string(cw) + "x" + std::to_string(ch) + "+" +
                                          std::to_string(x0) + "+" + std::to_string(y0)});
  }
  if (rng.bernoulli(spec.rotate_prob)) {
    const double deg = rng.uniform(spec.rotate_min_deg, spec.rotate_max_deg);
    work = rotate_deg(work, deg);
    result.actions.push_back({"rotate", fmt_exact(deg)});
  }
  if (rng.bernoulli(spec.brightness_prob)) {
    const double f = rng.uniform(spec.brightness_min, spec.brightness_max);
    work = adjust_brightness(work, f);
    result.actions.push_back({"brightness", fmt_exact(f)});
  }
  if (rng.bernoulli(spec.contrast_prob)) {
    const double f = rng.uniform(spec.contrast_min, spec.contrast_max);
    work = adjust_contrast(work, f);
    result.actions.push_back({"contrast", fmt_exact(f)});
  }

  result.frame = resize_bilinear(work, frame.width, frame.height);
  result.frame.capture_ts = frame.capture_ts;
  return result;
}

Manifest augment_corpus(const Manifest& labeled, const AugmentationSpec& spec,
                        const std::string& out_frames_dir, int threads,
                        AugmentCorpusReport* report) {
  spec.validate();
  if (labeled.kind == ManifestKind::Base) {
    throw ArgumentError("augment_corpus expects a labeled manifest");
  }
  std::filesystem::create_directories(out_frames_dir);

  AugmentCorpusReport local;
  AugmentCorpusReport* rep = report ? report : &local;
  *rep = {};

  struct RowOutput {
    bool readable = true;
    std::vector<FrameRecord> variants;
  };
  std::vector<RowOutput> outputs(labeled.rows.size());

  auto process_row = [&](std::size_t idx) {
    const FrameRecord& src = labeled.rows[idx];
    RasterFrame frame;
    try {
      frame = read_ppm(src.frame_path);
    } catch (const std::exception&) {
      outputs[idx].readable = false;
      return;
    }
    const std::string row_key =
        std::filesystem::path(src.frame_path).filename().string() + "|" + src.trip_id;
    const std::string stem =
        std::filesystem::path(src.frame_path).stem().string() + "__" + sanitize_id(src.trip_id);
    for (int pass = 0; pass < spec.passes_per_image; ++pass) {
      Rng rng(derive_seed(derive_seed(spec.seed, row_key), static_cast<std::uint64_t>(pass)));
      AugmentResult aug = augment_once(frame, spec, rng);
      FrameRecord variant = src;
      variant.frame_path = (std::filesystem::path(out_frames_dir) /
                            (stem + "_aug" + std::to_string(pass) + ".ppm"))
                               .string();
      variant.source_frame_id = src.frame_path;
      std::string actions, magnitudes;
      for (const auto& a : aug.actions) {
        if (!actions.empty()) {
          actions.push_back(';');
          magnitudes.push_back(';');
        }
        actions += a.name;
        magnitudes += a.name + "=" + a.magnitude;
      }
      variant.actions = actions;
      variant.magnitudes = magnitudes;
      write_ppm(variant.frame_path, aug.frame);
      outputs[idx].variants.push_back(std::move(variant));
    }
  };

  const int n_threads = std::max(1, threads);
  if (n_threads == 1) {
    for (std::size_t i = 0; i < labeled.rows.size(); ++i) process_row(i);
  } else {
    std::vector<std::thread> pool;
    std::size_t per = (labeled.rows.size() + n_threads - 1) / n_threads;
    for (int t = 0; t < n_threads; ++t) {
      const std::size_t lo = t * per;
      const std::size_t hi = std::min(labeled.rows.size(), lo + per);
      if (lo >= hi) break;
      pool.emplace_back([&, lo, hi] {
        for (std::size_t i = lo; i < hi; ++i) process_row(i);
      });
    }
    for (auto& th : pool) th.join();
  }

  Manifest out;
  out.kind = ManifestKind::Expanded;
  for (std::size_t i = 0; i < labeled.rows.size(); ++i) {
    if (!outputs[i].readable) {
      ++rep->skipped_unreadable;
      rep->skipped_paths.push_back(labeled.rows[i].frame_path);
      continue;
    }
    out.rows.push_back(labeled.rows[i]);  // original first, then its variants
    ++rep->originals;
    for (auto& v : outputs[i].variants) {
      out.rows.push_back(std::move(v));
      ++rep->variants;
    }
  }
  return out;
}

}  // namespace ttv
