#pragma once

#include <string>

#include "facemotion/motion.hpp"

namespace facemotion {

// Motion persistence: a plain-text manifest line block followed by the raw
// little-endian float32 arrays for shape and frames. The byte layout is
// documented in docs/formats.md; round-trips are bit-exact.
struct LoadedMotion {
  MotionSequence motion;
  ShapeParams shape;
  std::string identity;
};

void save_motion(const MotionSequence& motion, const ShapeParams& shape,
                 const std::string& path, const std::string& identity = "anon");

LoadedMotion load_motion(const std::string& path);

} // namespace facemotion
