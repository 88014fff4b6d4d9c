#pragma once

#include <cstdint>
#include <filesystem>

#include "json.hpp"

namespace patchssl {

// Desk-scale stand-in for a fundus cohort: an orange-red disc on a dark
// surround with smooth shading; diseased images carry small bright lesions.
struct SynthConfig {
  std::size_t canvas = 64;
  std::size_t healthy = 40;
  std::size_t diseased = 20;
  std::size_t lesions_min = 1;
  std::size_t lesions_max = 3;
  double radius_min = 1.5;  // pixels; >= 0.75 so every lesion owns at least its centre pixel
  double radius_max = 3.0;
  double intensity_min = 0.6;  // blend weight towards the lesion colour
  double intensity_max = 0.95;
  double noise_sigma = 0.01;
};

void to_json(nlohmann::json& j, const SynthConfig& c);
void from_json(const nlohmann::json& j, SynthConfig& c);

struct SynthSummary {
  std::size_t healthy = 0;
  std::size_t diseased = 0;
  std::size_t lesions = 0;
  std::size_t lesion_pixels = 0;
};

// Writes images/<id>.png, masks/<id>.png and manifest.json under out_dir.
// A lesion's mask is every pixel whose whole square lies inside its disc, so
// a mask never exceeds lesions_max * pi * radius_max^2 pixels.
SynthSummary synth_generate(const SynthConfig& config, const std::filesystem::path& out_dir,
                            std::uint64_t seed);

}  // namespace patchssl
