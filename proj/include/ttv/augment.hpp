#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ttv/image.hpp"
#include "ttv/manifest.hpp"
#include "ttv/rng.hpp"

namespace ttv {

// Randomized expansion pipeline: crop, rotate, brightness, contrast, applied
// independently with the given probabilities at uniform magnitudes within
// bounds. Defaults target 1280x720 sources; scaled_to() adapts the crop floor
// for other frame sizes.
struct AugmentationSpec {
  int crop_min_w = 560;
  int crop_min_h = 560;
  double rotate_min_deg = -30.0;
  double rotate_max_deg = 30.0;
  double brightness_min = 0.80;  // multiplicative factors (-20% .. +20%)
  double brightness_max = 1.20;
  double contrast_min = 0.80;
  double contrast_max = 1.20;
  double crop_prob = 0.33;
  double rotate_prob = 0.33;
  double brightness_prob = 0.50;
  double contrast_prob = 0.50;
  int passes_per_image = 6;
  std::uint64_t seed = 0;

  void validate() const;  // throws ArgumentError on bad bounds/probabilities

  // Same spec with the crop floor rescaled from the 1280x720 reference to a
  // frame of the given size (per-axis ratio preserved).
  AugmentationSpec scaled_to(int frame_w, int frame_h) const;
};

struct AppliedAction {
  std::string name;       // crop | rotate | brightness | contrast
  std::string magnitude;  // e.g. "612x588+12+30", "-12.50", "1.08"
};

struct AugmentResult {
  RasterFrame frame;
  std::vector<AppliedAction> actions;
};

// One pass through the pipeline. Actions run in the fixed order crop, rotate,
// brightness, contrast; the output is resized back to the source dimensions.
// Throws ArgumentError when the frame is smaller than the crop floor.
AugmentResult augment_once(const RasterFrame& frame, const AugmentationSpec& spec, Rng& rng);

struct AugmentCorpusReport {
  std::size_t originals = 0;
  std::size_t variants = 0;
  std::size_t skipped_unreadable = 0;
  std::vector<std::string> skipped_paths;
};

// Originals plus passes_per_image variants per manifest row. Variant rows
// carry lineage (source frame id, actions, magnitudes) and inherit the source
// label. Per-row seeds derive from spec.seed, so results do not depend on
// processing order; `threads` parallelizes across rows.
Manifest augment_corpus(const Manifest& labeled, const AugmentationSpec& spec,
                        const std::string& out_frames_dir, int threads = 1,
                        AugmentCorpusReport* report = nullptr);

}  // namespace ttv
