#include "facemotion/dataset.hpp"

#include <algorithm>
#include <cmath>

#include "facemotion/error.hpp"
#include "facemotion/rng.hpp"

namespace facemotion {

std::vector<ClipDescriptor> segment(const std::vector<SequenceRecord>& records,
                                    double segment_seconds, double fps) {
  require(segment_seconds > 0 && fps > 0, Errc::invalid_argument,
          "segment length and fps must be positive");
  int frames_per_clip = static_cast<int>(std::llround(segment_seconds * fps));
  std::vector<ClipDescriptor> clips;
  for (const SequenceRecord& rec : records) {
    require(rec.duration_seconds > 0, Errc::invalid_argument,
            "record '" + rec.id + "' has non-positive duration");
    require(!rec.id.empty(), Errc::invalid_argument, "record without an id");
    int count = static_cast<int>(std::floor(rec.duration_seconds / segment_seconds));
    for (int k = 0; k < count; ++k) {
      ClipDescriptor clip;
      clip.record_id = rec.id;
      clip.index = k;
      clip.id = rec.id + "_" + std::to_string(k);
      clip.start_seconds = k * segment_seconds;
      clip.start_frame = k * frames_per_clip;
      clip.frame_count = frames_per_clip;
      clips.push_back(std::move(clip));
    }
  }
  return clips;
}

SplitResult split(const std::vector<std::string>& clip_ids, const SplitRatios& ratios,
                  std::uint64_t seed) {
  require(!clip_ids.empty(), Errc::invalid_argument, "cannot split an empty clip list");
  require(ratios.train >= 0 && ratios.val >= 0 && ratios.test >= 0, Errc::invalid_argument,
          "split ratios must be non-negative");
  require(std::abs(ratios.train + ratios.val + ratios.test - 1.0) < 1e-9,
          Errc::invalid_argument, "split ratios must sum to 1");

  std::vector<std::string> shuffled = clip_ids;
  Rng rng(derive_seed(seed, RngStream::shuffle));
  rng.shuffle(shuffled);

  const std::size_t n = shuffled.size();
  // The epsilon keeps exact products like 0.15 * 20 from flooring down a ulp.
  auto floor_count = [n](double ratio) {
    return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 1e-9));
  };
  std::size_t n_test = floor_count(ratios.test);
  std::size_t n_val = floor_count(ratios.val);
  require(n_test + n_val <= n, Errc::invalid_argument, "split ratios leave no training data");
  std::size_t n_train = n - n_test - n_val;

  SplitResult out;
  out.train.assign(shuffled.begin(), shuffled.begin() + static_cast<long>(n_train));
  out.val.assign(shuffled.begin() + static_cast<long>(n_train),
                 shuffled.begin() + static_cast<long>(n_train + n_val));
  out.test.assign(shuffled.begin() + static_cast<long>(n_train + n_val), shuffled.end());
  return out;
}

void validate(const CropTrack& track) {
  require(track.frame_width > 0 && track.frame_height > 0, Errc::invalid_argument,
          "crop track needs positive frame dimensions");
  require(track.check_interval >= 1, Errc::invalid_argument, "check interval must be >= 1");
  require(!track.landmarks.empty(), Errc::invalid_argument, "crop track has no landmarks");
  int min_frames = (static_cast<int>(track.landmarks.size()) - 1) * track.check_interval + 1;
  require(track.frame_count >= min_frames, Errc::invalid_argument,
          "frame_count is shorter than the landmark checks span");
  Eigen::Index points = track.landmarks[0].rows();
  require(points >= 1, Errc::invalid_argument, "crop track frames need at least one landmark");
  for (const auto& f : track.landmarks) {
    require(f.rows() == points, Errc::dim_mismatch,
            "landmark count must be consistent across check frames");
    require(f.allFinite(), Errc::invalid_argument, "landmarks must be finite");
  }
  // The track must start inside the frame, otherwise no valid box exists.
  const auto& first = track.landmarks[0];
  for (Eigen::Index i = 0; i < first.rows(); ++i)
    require(first(i, 0) >= 0 && first(i, 0) <= track.frame_width && first(i, 1) >= 0 &&
                first(i, 1) <= track.frame_height,
            Errc::invalid_argument, "landmarks exceed frame bounds at track start");
}

std::vector<int> outline_landmarks() {
  std::vector<int> idx;
  for (int i = 0; i <= 26; ++i) idx.push_back(i); // jaw 0-16, brows 17-26
  return idx;
}

namespace {

CropBox fit_box(const Eigen::Matrix<double, Eigen::Dynamic, 2>& landmarks, int frame_w,
                int frame_h, double margin_ratio) {
  double min_x = landmarks.col(0).minCoeff();
  double max_x = landmarks.col(0).maxCoeff();
  double min_y = landmarks.col(1).minCoeff();
  double max_y = landmarks.col(1).maxCoeff();
  double face_side = std::max(max_x - min_x, max_y - min_y);
  require(face_side > 0, Errc::invalid_argument, "degenerate landmark bounding box");

  double side = face_side * (1.0 + 2.0 * margin_ratio);
  require(side <= frame_w && side <= frame_h, Errc::invalid_argument,
          "face with margin is larger than the video frame");

  double cx = 0.5 * (min_x + max_x);
  double cy = 0.5 * (min_y + max_y);
  // Shift the box the minimal amount needed to stay inside the frame.
  double x = std::clamp(cx - side / 2.0, 0.0, frame_w - side);
  double y = std::clamp(cy - side / 2.0, 0.0, frame_h - side);
  return CropBox{x, y, side};
}

bool too_close_to_border(const Eigen::Matrix<double, Eigen::Dynamic, 2>& landmarks,
                         const std::vector<int>& subset, const CropBox& box, double proximity) {
  double band = proximity * box.side;
  for (int idx : subset) {
    double x = landmarks(idx, 0);
    double y = landmarks(idx, 1);
    if (x < box.x + band || x > box.x + box.side - band || y < box.y + band ||
        y > box.y + box.side - band)
      return true;
  }
  return false;
}

} // namespace

std::vector<CropSegment> crop_plan(const CropTrack& track, const CropOptions& options) {
  validate(track);
  require(options.margin_ratio >= 0, Errc::invalid_argument, "margin_ratio must be >= 0");
  require(options.edge_proximity >= 0 && options.edge_proximity < 0.5, Errc::invalid_argument,
          "edge_proximity must be in [0, 0.5)");

  std::vector<int> subset;
  if (options.outline_only && track.landmarks[0].rows() == 68) {
    subset = outline_landmarks();
  } else {
    for (int i = 0; i < static_cast<int>(track.landmarks[0].rows()); ++i) subset.push_back(i);
  }

  std::vector<CropSegment> segments;
  int start = 0;
  CropBox box = fit_box(track.landmarks[0], track.frame_width, track.frame_height,
                        options.margin_ratio);
  for (std::size_t check = 1; check < track.landmarks.size(); ++check) {
    const auto& lm = track.landmarks[check];
    if (too_close_to_border(lm, subset, box, options.edge_proximity)) {
      int frame = static_cast<int>(check) * track.check_interval;
      segments.push_back(CropSegment{start, frame, box, 1024});
      start = frame;
      box = fit_box(lm, track.frame_width, track.frame_height, options.margin_ratio);
    }
  }
  segments.push_back(CropSegment{start, track.frame_count, box, 1024});
  return segments;
}

} // namespace facemotion
