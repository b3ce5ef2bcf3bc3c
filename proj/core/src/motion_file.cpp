#include "facemotion/motion_file.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "facemotion/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "motion files assume a little-endian host");

namespace facemotion {

namespace {

std::string format_fps(float fps) {
  char buf[32];
  // 9 significant digits round-trip any float32 exactly.
  std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(fps));
  return buf;
}

void read_exact(std::ifstream& in, float* dst, std::size_t count, const char* what) {
  in.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(count * sizeof(float)));
  require(in.gcount() == static_cast<std::streamsize>(count * sizeof(float)),
          Errc::truncated_payload, std::string(what) + " array truncated");
}

} // namespace

void save_motion(const MotionSequence& motion, const ShapeParams& shape,
                 const std::string& path, const std::string& identity) {
  require(identity.find_first_of(" \t\r\n") == std::string::npos && !identity.empty(),
          Errc::invalid_argument, "identity id must be a single token");

  std::ofstream out(path, std::ios::binary);
  require(out.good(), Errc::io, "cannot open '" + path + "' for writing");

  out << "motion 1\n"
      << "id " << identity << "\n"
      << "fps " << format_fps(motion.fps()) << "\n"
      << "frames " << motion.frame_count() << "\n"
      << "shape_dim " << kShapeDim << "\n"
      << "frame_dim " << kFrameDim << "\n"
      << "end\n";

  out.write(reinterpret_cast<const char*>(shape.beta().data()),
            static_cast<std::streamsize>(kShapeDim * sizeof(float)));
  for (const MotionFrame& f : motion.frames()) {
    std::vector<float> packed = pack_frame(f);
    out.write(reinterpret_cast<const char*>(packed.data()),
              static_cast<std::streamsize>(packed.size() * sizeof(float)));
  }
  require(out.good(), Errc::io, "write failed for '" + path + "'");
}

LoadedMotion load_motion(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), Errc::io, "cannot open '" + path + "' for reading");

  std::string line;
  require(static_cast<bool>(std::getline(in, line)), Errc::corrupt_manifest, "empty motion file");
  require(line == "motion 1", Errc::corrupt_manifest, "bad magic line '" + line + "'");

  std::string identity;
  float fps = 0.0f;
  long long frames = -1, shape_dim = -1, frame_dim = -1;
  bool saw_end = false;
  while (std::getline(in, line)) {
    if (line == "end") {
      saw_end = true;
      break;
    }
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "id") {
      ls >> identity;
    } else if (key == "fps") {
      ls >> fps;
    } else if (key == "frames") {
      ls >> frames;
    } else if (key == "shape_dim") {
      ls >> shape_dim;
    } else if (key == "frame_dim") {
      ls >> frame_dim;
    } else {
      fail(Errc::corrupt_manifest, "unknown manifest line '" + line + "'");
    }
    require(!ls.fail(), Errc::corrupt_manifest, "malformed manifest line '" + line + "'");
  }
  require(saw_end, Errc::corrupt_manifest, "manifest missing 'end'");
  require(!identity.empty() && frames >= 1 && fps > 0.0f, Errc::corrupt_manifest,
          "manifest missing id/fps/frames");
  require(shape_dim == kShapeDim && frame_dim == kFrameDim, Errc::dim_mismatch,
          "manifest dims do not match the expected " + std::to_string(kShapeDim) + "/" +
              std::to_string(kFrameDim) + " layout");

  std::vector<float> beta(kShapeDim);
  read_exact(in, beta.data(), beta.size(), "shape");

  std::vector<MotionFrame> motion_frames;
  motion_frames.reserve(static_cast<std::size_t>(frames));
  std::vector<float> packed(kFrameDim);
  for (long long t = 0; t < frames; ++t) {
    read_exact(in, packed.data(), packed.size(), "frames");
    motion_frames.push_back(unpack_frame(packed));
  }
  // Trailing bytes mean the manifest disagrees with the payload.
  char extra = 0;
  in.read(&extra, 1);
  require(in.gcount() == 0, Errc::truncated_payload, "payload larger than manifest declares");

  return LoadedMotion{MotionSequence(std::move(motion_frames), fps), ShapeParams(std::move(beta)),
                      identity};
}

} // namespace facemotion
