#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "facemotion/dataset.hpp"
#include "facemotion/metrics.hpp"

namespace facemotion {

// JSON schemas for the interchange files are documented in docs/formats.md.

struct LandmarkTrackFile {
  LandmarkTrack track;
  double fps = 30.0;
  int frame_width = 0; // 0 when unknown
  int frame_height = 0;
};

LandmarkTrackFile load_landmark_track(const std::string& path);
void save_landmark_track(const LandmarkTrackFile& file, const std::string& path);

CropTrack load_crop_track(const std::string& path);
void save_crop_track(const CropTrack& track, const std::string& path);

std::vector<SequenceRecord> load_records(const std::string& path);
void save_records(const std::vector<SequenceRecord>& records, const std::string& path);

std::vector<ClipDescriptor> load_clips(const std::string& path);
void save_clips(const std::vector<ClipDescriptor>& clips, double segment_seconds, double fps,
                const std::string& path);

SplitResult load_split(const std::string& path);
void save_split(const SplitResult& split, std::uint64_t seed, const std::string& path);

void save_crop_plan(const std::vector<CropSegment>& segments, const CropOptions& options,
                    const std::string& path);
std::vector<CropSegment> load_crop_plan(const std::string& path);

} // namespace facemotion
