#pragma once

#include "vtu/synthetic.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace vtu {

inline constexpr int kDatasetFormatVersion = 1;

/// Contents of `<root>/manifest.txt`.
struct DatasetManifest {
  int format_version = kDatasetFormatVersion;
  SceneSpec spec;  // spec.seed is the dataset seed
  Index sequences = 0;
  DatasetSplit split;

  std::vector<std::string> ids() const;
  const std::vector<std::string>& split_ids(const std::string& name) const;
  std::string to_text() const;
  static DatasetManifest parse(const std::string& text, const std::string& source);
};

/// "seq_000", "seq_001", ...
std::string sequence_id(Index i);
/// Scene for the i-th sequence: the dataset spec with a per-sequence seed.
SceneSpec sequence_spec(const SceneSpec& base, Index i);

/// Writes `<root>/<id>/frames/<k>.vtt1`, `<root>/<id>/masks/<k>_bolus.pgm`,
/// `<k>_pharynx.pgm` and the manifest. Existing files are overwritten.
DatasetManifest generate_dataset(const std::filesystem::path& root, const SceneSpec& spec, Index sequences);

DatasetManifest read_manifest(const std::filesystem::path& root);

/// Frames and masks of one stored sequence (no occlusion record).
Sequence load_sequence(const std::filesystem::path& root, const std::string& id, Index length);

/// Center-aligned stacks of length t for every frame of the named split
/// ("train", "val" or "test"), in sequence-id then frame order.
std::vector<FrameStack> load_split(const std::filesystem::path& root, const DatasetManifest& manifest,
                                   const std::string& split, Index t);

}  // namespace vtu
