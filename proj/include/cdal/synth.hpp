#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cdal/rng.hpp"
#include "cdal/tensor.hpp"

namespace cdal {

// Geometry and content parameters shared by every sample of a dataset.
struct SynthConfig {
  int height = 32;
  int width = 32;
  double sensor_sigma = 0.01;
  double content_center = 0.5;
  double content_span = 0.6;  // content dynamic range (peak-to-peak bound)
};

// A generator plants a subtle sinusoidal artifact at integer frequencies
// (fx, fy), restricted to a mask, with a phase fixed per generator.
struct GeneratorSpec {
  enum class Mask { kQuadrant, kFull, kBorder };

  int gen_id = 0;
  int fx = 1, fy = 1;
  double amplitude = 0.12;
  Mask mask = Mask::kFull;
  int quadrant = 0;  // used when mask == kQuadrant
  std::uint64_t phase_seed = 0;

  void validate(const SynthConfig& cfg) const;
};

bool in_mask(const GeneratorSpec& gen, int h, int w, int H, int W);

// A source identity: a low-frequency random field, identical across
// generators, standing in for the semantic content forgeries inherit.
struct SourceSpec {
  int identity_id = 0;
  // per channel, one (amplitude, phase) pair per low-frequency basis mode
  std::vector<double> amplitudes;
  std::vector<double> phases;

  static SourceSpec make(int identity_id, std::uint64_t seed, const SynthConfig& cfg);
};

// The content field alone, before any generator artifact or noise.
Tensor content_field(const SourceSpec& source, const SynthConfig& cfg);

// content + masked sinusoid + i.i.d. sensor noise, clipped to [0,1]
Tensor synthesize(const SourceSpec& source, const GeneratorSpec& gen,
                  const SynthConfig& cfg, Rng& rng);

struct SyntheticSample {
  Tensor image;  // [3,H,W]
  int gen_id = 0;
  int identity_id = 0;
  bool labeled = false;
};

struct DatasetManifest {
  std::uint64_t seed = 0;
  int height = 0;
  int width = 0;
  std::vector<int> known_gen_ids;
  std::vector<int> novel_gen_ids;
  std::map<int, int> counts;         // samples per gen_id
  std::vector<long long> offsets;    // byte offset of each sample in images.bin

  int known_class_count() const { return static_cast<int>(known_gen_ids.size()); }
  int novel_class_count() const { return static_cast<int>(novel_gen_ids.size()); }
  // class index of a known generator id, -1 for novel ids
  int known_class_of(int gen_id) const;
  void validate() const;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<SyntheticSample> samples;

  std::vector<int> labeled_indices() const;
  std::vector<int> unlabeled_indices() const;
};

struct DatasetConfig {
  std::uint64_t seed = 1;
  int height = 32;
  int width = 32;
  int known_generators = 4;
  int novel_generators = 4;
  int samples_per_class = 200;
  int identity_count = 32;
  double artifact_amplitude = 0.12;
  double sensor_sigma = 0.01;

  void validate() const;
  SynthConfig synth() const;
};

// Fixed frequency/mask table; phases derive from the dataset seed.
std::vector<GeneratorSpec> make_generators(const DatasetConfig& cfg);

// Labeled samples cover known generators only; unlabeled samples mix known
// and novel. Identities are shared across all generators.
Dataset build_dataset(const DatasetConfig& cfg);

// Directory layout: manifest.json + images.bin (concatenated CDT1 tensors)
// + labels.csv (sample_index,gen_id,identity_id,labeled).
void write_dataset(const Dataset& dataset, const std::string& dir);
Dataset load_dataset(const std::string& dir);

}  // namespace cdal
