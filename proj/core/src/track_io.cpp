#include "facemotion/track_io.hpp"

#include <fstream>

#include <json.hpp>

#include "facemotion/error.hpp"

namespace facemotion {

namespace {

using nlohmann::json;

json load_json(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), Errc::io, "cannot open '" + path + "' for reading");
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    fail(Errc::corrupt_manifest, "'" + path + "' is not valid JSON: " + e.what());
  }
  return j;
}

void save_json(const json& j, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), Errc::io, "cannot open '" + path + "' for writing");
  out << j.dump(2) << "\n";
  require(out.good(), Errc::io, "write failed for '" + path + "'");
}

std::vector<Eigen::Matrix<double, Eigen::Dynamic, 2>> parse_frames(const json& frames,
                                                                   const std::string& path) {
  require(frames.is_array() && !frames.empty(), Errc::corrupt_manifest,
          "'" + path + "' has no landmark frames");
  std::vector<Eigen::Matrix<double, Eigen::Dynamic, 2>> out;
  for (const json& frame : frames) {
    require(frame.is_array() && !frame.empty(), Errc::corrupt_manifest,
            "'" + path + "' has an empty landmark frame");
    Eigen::Matrix<double, Eigen::Dynamic, 2> pts(frame.size(), 2);
    Eigen::Index r = 0;
    for (const json& p : frame) {
      require(p.is_array() && p.size() == 2, Errc::corrupt_manifest,
              "'" + path + "' has a malformed landmark point");
      pts(r, 0) = p[0].get<double>();
      pts(r, 1) = p[1].get<double>();
      ++r;
    }
    out.push_back(std::move(pts));
  }
  return out;
}

json frames_to_json(const std::vector<Eigen::Matrix<double, Eigen::Dynamic, 2>>& frames) {
  json out = json::array();
  for (const auto& f : frames) {
    json frame = json::array();
    for (Eigen::Index r = 0; r < f.rows(); ++r) frame.push_back({f(r, 0), f(r, 1)});
    out.push_back(std::move(frame));
  }
  return out;
}

} // namespace

LandmarkTrackFile load_landmark_track(const std::string& path) {
  json j = load_json(path);
  require(j.contains("frames"), Errc::corrupt_manifest, "'" + path + "' is missing 'frames'");
  LandmarkTrack track(parse_frames(j["frames"], path));
  double fps = j.value("fps", 30.0);
  int w = 0, h = 0;
  if (j.contains("frame_size")) {
    require(j["frame_size"].is_array() && j["frame_size"].size() == 2, Errc::corrupt_manifest,
            "'" + path + "' has a malformed frame_size");
    w = j["frame_size"][0].get<int>();
    h = j["frame_size"][1].get<int>();
  }
  require(fps > 0, Errc::corrupt_manifest, "'" + path + "' has non-positive fps");
  return LandmarkTrackFile{std::move(track), fps, w, h};
}

void save_landmark_track(const LandmarkTrackFile& file, const std::string& path) {
  json j;
  j["fps"] = file.fps;
  if (file.frame_width > 0 && file.frame_height > 0)
    j["frame_size"] = {file.frame_width, file.frame_height};
  j["frames"] = frames_to_json(file.track.frames);
  save_json(j, path);
}

CropTrack load_crop_track(const std::string& path) {
  json j = load_json(path);
  CropTrack track;
  require(j.contains("frame_size") && j.contains("frame_count") && j.contains("landmarks"),
          Errc::corrupt_manifest,
          "'" + path + "' is missing frame_size/frame_count/landmarks");
  track.frame_width = j["frame_size"][0].get<int>();
  track.frame_height = j["frame_size"][1].get<int>();
  track.frame_count = j["frame_count"].get<int>();
  track.check_interval = j.value("check_interval", 6);
  track.landmarks = parse_frames(j["landmarks"], path);
  validate(track);
  return track;
}

void save_crop_track(const CropTrack& track, const std::string& path) {
  validate(track);
  json j;
  j["frame_size"] = {track.frame_width, track.frame_height};
  j["frame_count"] = track.frame_count;
  j["check_interval"] = track.check_interval;
  j["landmarks"] = frames_to_json(track.landmarks);
  save_json(j, path);
}

std::vector<SequenceRecord> load_records(const std::string& path) {
  json j = load_json(path);
  const json& list = j.is_array() ? j : j.at("records");
  require(list.is_array(), Errc::corrupt_manifest, "'" + path + "' is not a record list");
  std::vector<SequenceRecord> out;
  for (const json& r : list) {
    SequenceRecord rec;
    rec.id = r.at("id").get<std::string>();
    rec.duration_seconds = r.at("duration_seconds").get<double>();
    rec.fps = r.value("fps", 30.0);
    rec.audio_path = r.value("audio", "");
    rec.motion_path = r.value("motion", "");
    out.push_back(std::move(rec));
  }
  return out;
}

void save_records(const std::vector<SequenceRecord>& records, const std::string& path) {
  json list = json::array();
  for (const SequenceRecord& rec : records) {
    json r;
    r["id"] = rec.id;
    r["duration_seconds"] = rec.duration_seconds;
    r["fps"] = rec.fps;
    if (!rec.audio_path.empty()) r["audio"] = rec.audio_path;
    if (!rec.motion_path.empty()) r["motion"] = rec.motion_path;
    list.push_back(std::move(r));
  }
  save_json(list, path);
}

std::vector<ClipDescriptor> load_clips(const std::string& path) {
  json j = load_json(path);
  require(j.contains("clips"), Errc::corrupt_manifest, "'" + path + "' is missing 'clips'");
  std::vector<ClipDescriptor> out;
  for (const json& c : j["clips"]) {
    ClipDescriptor clip;
    clip.id = c.at("id").get<std::string>();
    clip.record_id = c.at("record").get<std::string>();
    clip.index = c.at("index").get<int>();
    clip.start_seconds = c.at("start_seconds").get<double>();
    clip.start_frame = c.at("start_frame").get<int>();
    clip.frame_count = c.at("frames").get<int>();
    out.push_back(std::move(clip));
  }
  return out;
}

void save_clips(const std::vector<ClipDescriptor>& clips, double segment_seconds, double fps,
                const std::string& path) {
  json j;
  j["segment_seconds"] = segment_seconds;
  j["fps"] = fps;
  json list = json::array();
  for (const ClipDescriptor& clip : clips) {
    json c;
    c["id"] = clip.id;
    c["record"] = clip.record_id;
    c["index"] = clip.index;
    c["start_seconds"] = clip.start_seconds;
    c["start_frame"] = clip.start_frame;
    c["frames"] = clip.frame_count;
    list.push_back(std::move(c));
  }
  j["clips"] = std::move(list);
  save_json(j, path);
}

SplitResult load_split(const std::string& path) {
  json j = load_json(path);
  SplitResult out;
  out.train = j.at("train").get<std::vector<std::string>>();
  out.val = j.at("val").get<std::vector<std::string>>();
  out.test = j.at("test").get<std::vector<std::string>>();
  return out;
}

void save_split(const SplitResult& split, std::uint64_t seed, const std::string& path) {
  json j;
  j["seed"] = seed;
  j["counts"] = {{"train", split.train.size()},
                 {"val", split.val.size()},
                 {"test", split.test.size()}};
  j["train"] = split.train;
  j["val"] = split.val;
  j["test"] = split.test;
  save_json(j, path);
}

void save_crop_plan(const std::vector<CropSegment>& segments, const CropOptions& options,
                    const std::string& path) {
  json j;
  j["margin_ratio"] = options.margin_ratio;
  j["edge_proximity"] = options.edge_proximity;
  json list = json::array();
  for (const CropSegment& s : segments) {
    json seg;
    seg["start_frame"] = s.start_frame;
    seg["end_frame"] = s.end_frame;
    seg["box"] = {{"x", s.box.x}, {"y", s.box.y}, {"side", s.box.side}};
    seg["resize_to"] = s.resize_to;
    list.push_back(std::move(seg));
  }
  j["segments"] = std::move(list);
  save_json(j, path);
}

std::vector<CropSegment> load_crop_plan(const std::string& path) {
  json j = load_json(path);
  std::vector<CropSegment> out;
  for (const json& s : j.at("segments")) {
    CropSegment seg;
    seg.start_frame = s.at("start_frame").get<int>();
    seg.end_frame = s.at("end_frame").get<int>();
    seg.box.x = s.at("box").at("x").get<double>();
    seg.box.y = s.at("box").at("y").get<double>();
    seg.box.side = s.at("box").at("side").get<double>();
    seg.resize_to = s.value("resize_to", 1024);
    out.push_back(seg);
  }
  return out;
}

} // namespace facemotion
