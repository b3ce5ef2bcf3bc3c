#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace facemotion {

// One long recording in the inventory.
struct SequenceRecord {
  std::string id;
  double duration_seconds = 0.0;
  double fps = 30.0;
  std::string audio_path;  // optional link
  std::string motion_path; // optional link
};

// One fixed-length clip cut from a record.
struct ClipDescriptor {
  std::string id;        // "<record>_<index>"
  std::string record_id;
  int index = 0;
  double start_seconds = 0.0;
  int start_frame = 0;
  int frame_count = 0;
};

// Cuts every record into floor(duration / segment_seconds) equal-length
// clips; the remainder is dropped.
std::vector<ClipDescriptor> segment(const std::vector<SequenceRecord>& records,
                                    double segment_seconds = 8.0, double fps = 30.0);

struct SplitRatios {
  double train = 0.80;
  double val = 0.05;
  double test = 0.15;
};

struct SplitResult {
  std::vector<std::string> train, val, test;
};

// Deterministic shuffled partition: test = floor(test_ratio * N),
// val = floor(val_ratio * N), train takes the remainder.
SplitResult split(const std::vector<std::string>& clip_ids, const SplitRatios& ratios,
                  std::uint64_t seed);

// Landmarks observed at a fixed check cadence over a long recording.
struct CropTrack {
  int frame_width = 0;
  int frame_height = 0;
  int frame_count = 0;    // total video frames spanned by the track
  int check_interval = 6; // landmark detection cadence in frames
  std::vector<Eigen::Matrix<double, Eigen::Dynamic, 2>> landmarks; // entry i = frame i*interval
};

void validate(const CropTrack& track);

struct CropBox {
  double x = 0.0; // top-left corner
  double y = 0.0;
  double side = 0.0; // boxes are square
};

struct CropSegment {
  int start_frame = 0;
  int end_frame = 0; // exclusive
  CropBox box;
  int resize_to = 1024; // output resolution of the cropped portrait video
};

// Outline subset of the 68-point convention (jaw + brows) used for the
// edge-proximity cut rule.
std::vector<int> outline_landmarks();

struct CropOptions {
  double margin_ratio = 0.25;   // margin per side, relative to the face-box side
  double edge_proximity = 0.05; // cut when an edge landmark is within this fraction of the side
  bool outline_only = true;     // check only outline landmarks (false: all points)
};

// Serializes a long track into segments with stable square crop boxes: a new
// segment with a freshly fitted box starts at every check frame where an
// edge landmark comes too close to (or exits) the current box.
std::vector<CropSegment> crop_plan(const CropTrack& track, const CropOptions& options = {});

} // namespace facemotion
