#include "vtu/dataset.hpp"

#include "vtu/io.hpp"
#include "vtu/keyvalue.hpp"
#include "vtu/random.hpp"

#include <cstdio>

namespace vtu {

namespace fs = std::filesystem;

std::vector<std::string> DatasetManifest::ids() const {
  std::vector<std::string> out;
  for (Index i = 0; i < sequences; ++i) out.push_back(sequence_id(i));
  return out;
}

const std::vector<std::string>& DatasetManifest::split_ids(const std::string& name) const {
  if (name == "train") return split.train;
  if (name == "val") return split.val;
  if (name == "test") return split.test;
  throw std::invalid_argument("unknown split '" + name + "' (expected train, val or test)");
}

std::string DatasetManifest::to_text() const {
  KeyValues kv;
  kv.set("format_version", std::to_string(format_version));
  kv.set("seed", std::to_string(spec.seed));
  kv.set("height", std::to_string(spec.height));
  kv.set("width", std::to_string(spec.width));
  kv.set("sequence_length", std::to_string(spec.sequence_length));
  kv.set("noise_sigma", format_double(spec.noise_sigma));
  kv.set("occlusion_prob", format_double(spec.occlusion_prob));
  kv.set("occlusion_min", format_double(spec.occlusion_min));
  kv.set("occlusion_max", format_double(spec.occlusion_max));
  kv.set("sequences", std::to_string(sequences));
  kv.set("split.train", join(split.train));
  kv.set("split.val", join(split.val));
  kv.set("split.test", join(split.test));
  return kv.to_text();
}

DatasetManifest DatasetManifest::parse(const std::string& text, const std::string& source) {
  const KeyValues kv = KeyValues::parse(text, source);
  DatasetManifest m;
  m.format_version = static_cast<int>(kv.get_int("format_version"));
  if (m.format_version != kDatasetFormatVersion)
    throw FormatError(source + ": unsupported dataset format_version " + std::to_string(m.format_version));
  m.spec.seed = kv.get_uint("seed");
  m.spec.height = kv.get_int("height");
  m.spec.width = kv.get_int("width");
  m.spec.sequence_length = kv.get_int("sequence_length");
  m.spec.noise_sigma = kv.get_double("noise_sigma");
  m.spec.occlusion_prob = kv.get_double("occlusion_prob");
  m.spec.occlusion_min = kv.get_double("occlusion_min");
  m.spec.occlusion_max = kv.get_double("occlusion_max");
  m.sequences = kv.get_int("sequences");
  m.split.train = kv.get_list("split.train");
  m.split.val = kv.get_list("split.val");
  m.split.test = kv.get_list("split.test");
  m.spec.validate();
  return m;
}

std::string sequence_id(Index i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "seq_%03lld", static_cast<long long>(i));
  return buf;
}

SceneSpec sequence_spec(const SceneSpec& base, Index i) {
  SceneSpec s = base;
  s.seed = mix_seed(base.seed, 0xDA7A, static_cast<std::uint64_t>(i));
  return s;
}

DatasetManifest generate_dataset(const fs::path& root, const SceneSpec& spec, Index sequences) {
  spec.validate();
  if (sequences < 1) throw std::invalid_argument("generate_dataset: need at least one sequence");
  DatasetManifest m;
  m.spec = spec;
  m.sequences = sequences;
  m.split = split_dataset(m.ids(), 0.70, 0.15, spec.seed);
  for (Index i = 0; i < sequences; ++i) {
    const std::string id = sequence_id(i);
    const Sequence seq = generate_sequence(sequence_spec(spec, i), id);
    for (std::size_t k = 0; k < seq.frames.size(); ++k) {
      const std::string ks = std::to_string(k);
      write_vtt1(root / id / "frames" / (ks + ".vtt1"), seq.frames[k]);
      write_mask_pgm(root / id / "masks" / (ks + "_bolus.pgm"), seq.masks[k].bolus);
      write_mask_pgm(root / id / "masks" / (ks + "_pharynx.pgm"), seq.masks[k].pharynx);
    }
  }
  write_text(root / "manifest.txt", m.to_text());
  return m;
}

DatasetManifest read_manifest(const fs::path& root) {
  const fs::path p = root / "manifest.txt";
  if (!fs::exists(p)) throw std::runtime_error("dataset manifest not found: " + p.string());
  const auto bytes = read_file(p);
  return DatasetManifest::parse(std::string(bytes.begin(), bytes.end()), p.string());
}

Sequence load_sequence(const fs::path& root, const std::string& id, Index length) {
  Sequence seq;
  seq.id = id;
  for (Index k = 0; k < length; ++k) {
    const std::string ks = std::to_string(k);
    Tensorf frame = read_vtt1(root / id / "frames" / (ks + ".vtt1"));
    if (frame.rank() != 2) throw FormatError("frame " + id + "/" + ks + " is not H x W");
    MaskPair<float> m{read_mask_pgm(root / id / "masks" / (ks + "_bolus.pgm")),
                      read_mask_pgm(root / id / "masks" / (ks + "_pharynx.pgm"))};
    if (m.bolus.shape() != frame.shape() || m.pharynx.shape() != frame.shape())
      throw FormatError("mask extent differs from frame " + id + "/" + ks);
    seq.frames.push_back(std::move(frame));
    seq.masks.push_back(std::move(m));
  }
  return seq;
}

std::vector<FrameStack> load_split(const fs::path& root, const DatasetManifest& manifest, const std::string& split,
                                   Index t) {
  std::vector<FrameStack> out;
  for (const auto& id : manifest.split_ids(split)) {
    auto stacks = extract_snippets(load_sequence(root, id, manifest.spec.sequence_length), t);
    for (auto& s : stacks) out.push_back(std::move(s));
  }
  return out;
}

}  // namespace vtu
