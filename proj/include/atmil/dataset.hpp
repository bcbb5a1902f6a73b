#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "atmil/bag.hpp"
#include "atmil/errors.hpp"
#include "atmil/morpho.hpp"
#include "atmil/rng.hpp"

namespace atmil {

// Bag assembly and the on-disk dataset format. In the binary scheme a
// positive bag hides a handful of thickened (focal/diffuse) instances among
// plain and fragmented ones; a negative bag contains none. The four-class
// scheme labels a bag by the single perturbation class all of its instances
// share. Auxiliary labels always come from the rendered pixels: 1 iff the
// instance has more than one 8-connected component.

enum class LabelScheme : uint8_t { binary = 0, four_class = 1 };

inline const char* scheme_name(LabelScheme s) {
  return s == LabelScheme::binary ? "binary" : "four_class";
}

inline LabelScheme parse_scheme(const std::string& s) {
  if (s == "binary") return LabelScheme::binary;
  if (s == "four_class") return LabelScheme::four_class;
  throw ConfigError("unknown label scheme '" + s + "'");
}

struct BagSpec {
  int bag_size = 100;
  LabelScheme scheme = LabelScheme::binary;
  int positive_min = 1;   // positive-instance count range for positive bags
  int positive_max = 10;
  double diffuse_fraction = 0.5;   // P(diffuse | positive instance)
  double inactive_fraction = 0.5;  // P(inactive | background instance)
  bool intensity_jitter = false;   // optional augmentation, off by default

  void validate() const {
    if (bag_size < 1) throw ConfigError("bag_size must be at least 1");
    if (positive_min < 0 || positive_min > positive_max || positive_max > bag_size)
      throw ConfigError("positive instance range [" + std::to_string(positive_min) + "," +
                        std::to_string(positive_max) + "] does not fit a bag of " +
                        std::to_string(bag_size));
    if (scheme == LabelScheme::binary && positive_min < 1)
      throw ConfigError("positive bags need at least one positive instance");
    if (diffuse_fraction < 0.0 || diffuse_fraction > 1.0 || inactive_fraction < 0.0 ||
        inactive_fraction > 1.0)
      throw ConfigError("class mix fractions must be in [0,1]");
  }

  int main_classes() const { return scheme == LabelScheme::binary ? 2 : 4; }
};

namespace detail {

/// Pixels quantize to the u8 grid at generation time so that in-memory bags
/// and bags round-tripped through an archive are identical.
inline void quantize_pixels(std::vector<double>& pixels) {
  for (double& p : pixels) p = std::lround(std::clamp(p, 0.0, 1.0) * 255.0) / 255.0;
}

inline Instance make_instance(DigitImage img, PerturbClass cls, bool jitter, Rng& rng) {
  if (jitter) {
    double factor = rng.uniform(0.6, 1.0);
    for (double& p : img.pixels)
      if (p > 0.5) p *= factor;
  }
  quantize_pixels(img.pixels);
  Instance inst;
  inst.height = img.height;
  inst.width = img.width;
  inst.pixels = std::move(img.pixels);
  int components = count_components(inst.pixels, inst.height, inst.width, 8);
  inst.meta["class"] = perturb_name(cls);
  inst.meta["components"] = std::to_string(components);
  return inst;
}

inline PerturbClass draw_background_class(const BagSpec& spec, Rng& rng) {
  return rng.bernoulli(spec.inactive_fraction) ? PerturbClass::inactive : PerturbClass::healthy;
}

inline PerturbClass draw_positive_class(const BagSpec& spec, Rng& rng) {
  return rng.bernoulli(spec.diffuse_fraction) ? PerturbClass::diffuse : PerturbClass::focal;
}

}  // namespace detail

/// Builds one bag with a forced label. Binary scheme: label 1 bags hold
/// k ~ uniform[positive_min, positive_max] focal/diffuse instances at random
/// slots, everything else healthy/inactive; label 0 bags hold none.
/// Four-class scheme: every instance carries the bag's class.
inline Bag build_bag_with_label(const BagSpec& spec, int bag_label, int bag_id, Rng& rng) {
  spec.validate();
  if (bag_label < 0 || bag_label >= spec.main_classes())
    throw ConfigError("bag label " + std::to_string(bag_label) + " outside scheme range");

  std::vector<PerturbClass> classes(static_cast<size_t>(spec.bag_size));
  if (spec.scheme == LabelScheme::binary) {
    for (auto& c : classes) c = detail::draw_background_class(spec, rng);
    if (bag_label == 1) {
      int k = static_cast<int>(rng.uniform_int(spec.positive_min, spec.positive_max));
      // choose k distinct slots
      std::vector<int> slots(static_cast<size_t>(spec.bag_size));
      for (int i = 0; i < spec.bag_size; ++i) slots[static_cast<size_t>(i)] = i;
      rng.shuffle(slots);
      for (int i = 0; i < k; ++i)
        classes[static_cast<size_t>(slots[static_cast<size_t>(i)])] =
            detail::draw_positive_class(spec, rng);
    }
  } else {
    for (auto& c : classes) c = static_cast<PerturbClass>(bag_label);
  }

  Bag bag;
  bag.id = bag_id;
  bag.bag_label = bag_label;
  for (PerturbClass cls : classes) {
    // the occasional stroke refuses to fragment; redraw the base digit
    DigitImage img;
    for (int attempt = 0;; ++attempt) {
      DigitImage base = gen_stroke_digit(rng);
      try {
        img = perturb(base, cls, rng);
        break;
      } catch (const DataError&) {
        if (attempt >= 20) throw;
      }
    }
    Instance inst = detail::make_instance(std::move(img), cls, spec.intensity_jitter, rng);
    bag.aux_labels.push_back(inst.meta.at("components") != "1" ? 1 : 0);
    bag.instances.push_back(std::move(inst));
  }
  return bag;
}

/// Bag with a label drawn uniformly from the scheme's classes.
inline Bag build_bag(const BagSpec& spec, Rng& rng) {
  spec.validate();
  int label = static_cast<int>(rng.uniform_int(0, spec.main_classes() - 1));
  return build_bag_with_label(spec, label, /*bag_id=*/0, rng);
}

struct SplitSpec {
  std::string name;
  int bags = 0;
};

struct DatasetManifest {
  int version = 1;
  uint64_t seed = 0;
  BagSpec spec;
  std::vector<SplitSpec> splits;

  const SplitSpec& split(const std::string& name) const {
    for (const SplitSpec& s : splits)
      if (s.name == name) return s;
    throw UsageError("no split named '" + name + "'");
  }
};

namespace detail {

/// Fixed id bases keep bag ids disjoint across splits and keep a split's
/// bags stable when only its count changes (train bag i is the same bag in
/// a 100-bag and a 500-bag manifest).
inline int split_id_base(const std::string& name) {
  if (name == "train") return 0;
  if (name == "val") return 1000000;
  if (name == "test") return 2000000;
  int base = 3000000;
  for (char c : name) base += static_cast<unsigned char>(c) * 1009;
  return base;
}

}  // namespace detail

/// Deterministic function of (manifest seed, split name, index): each bag
/// derives its own generator stream, so parallel and serial generation and
/// repeated runs agree bit for bit. Labels alternate through the scheme's
/// classes for equal representation.
inline Bag generate_bag(const DatasetManifest& manifest, const std::string& split_name, int index) {
  int label = index % manifest.spec.main_classes();
  int bag_id = detail::split_id_base(split_name) + index;
  Rng rng(derive_seed(manifest.seed, static_cast<uint64_t>(bag_id)));
  return build_bag_with_label(manifest.spec, label, bag_id, rng);
}

inline std::vector<Bag> generate_split(const DatasetManifest& manifest,
                                       const std::string& split_name) {
  const SplitSpec& split = manifest.split(split_name);
  std::vector<Bag> bags;
  bags.reserve(static_cast<size_t>(split.bags));
  for (int i = 0; i < split.bags; ++i) bags.push_back(generate_bag(manifest, split_name, i));
  return bags;
}

// ---------------------------------------------------------------------------
// Manifest file: line-oriented "key value" text, fixed key order on write,
// strict on read (unknown keys are errors).

inline void write_manifest(const DatasetManifest& manifest, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError(path + ": cannot open for writing");
  out << "atmil-dataset " << manifest.version << "\n";
  out << "seed " << manifest.seed << "\n";
  out << "scheme " << scheme_name(manifest.spec.scheme) << "\n";
  out << "bag_size " << manifest.spec.bag_size << "\n";
  out << "positive_min " << manifest.spec.positive_min << "\n";
  out << "positive_max " << manifest.spec.positive_max << "\n";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", manifest.spec.diffuse_fraction);
  out << "diffuse_fraction " << buf << "\n";
  std::snprintf(buf, sizeof(buf), "%.17g", manifest.spec.inactive_fraction);
  out << "inactive_fraction " << buf << "\n";
  out << "intensity_jitter " << (manifest.spec.intensity_jitter ? 1 : 0) << "\n";
  for (const SplitSpec& s : manifest.splits) out << "split " << s.name << " " << s.bags << "\n";
}

inline DatasetManifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(path + ": cannot open");
  DatasetManifest m;
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path + ": empty manifest");
  {
    std::istringstream head(line);
    std::string tag;
    head >> tag >> m.version;
    if (tag != "atmil-dataset" || m.version != 1)
      throw FormatError(path + ": not an atmil-dataset v1 manifest");
  }
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "seed") ls >> m.seed;
    else if (key == "scheme") {
      std::string v;
      ls >> v;
      m.spec.scheme = parse_scheme(v);
    } else if (key == "bag_size") ls >> m.spec.bag_size;
    else if (key == "positive_min") ls >> m.spec.positive_min;
    else if (key == "positive_max") ls >> m.spec.positive_max;
    else if (key == "diffuse_fraction") ls >> m.spec.diffuse_fraction;
    else if (key == "inactive_fraction") ls >> m.spec.inactive_fraction;
    else if (key == "intensity_jitter") {
      int v = 0;
      ls >> v;
      m.spec.intensity_jitter = v != 0;
    } else if (key == "split") {
      SplitSpec s;
      ls >> s.name >> s.bags;
      m.splits.push_back(s);
    } else {
      throw FormatError(path + ": unknown manifest key '" + key + "'");
    }
    if (ls.fail()) throw FormatError(path + ": malformed line '" + line + "'");
  }
  m.spec.validate();
  return m;
}

// ---------------------------------------------------------------------------
// Bag archive: little-endian binary, one file per split.
//   "ATMB" u32(version=1) u32(bag_count) u32(h) u32(w)
//   per bag:    u32(id) u8(label) u32(instances)
//   per instance: u8(class) u8(aux_label) u16(components) u8[h*w] pixels

namespace detail {

inline void write_u32(std::ostream& out, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t read_u32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (in.gcount() != 4) throw FormatError(path + ": truncated archive");
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace detail

inline void write_bags(const std::vector<Bag>& bags, const std::string& path) {
  if (bags.empty()) throw UsageError("write_bags: nothing to write");
  int h = bags[0].instances.at(0).height, w = bags[0].instances.at(0).width;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(path + ": cannot open for writing");
  out.write("ATMB", 4);
  detail::write_u32(out, 1);
  detail::write_u32(out, static_cast<uint32_t>(bags.size()));
  detail::write_u32(out, static_cast<uint32_t>(h));
  detail::write_u32(out, static_cast<uint32_t>(w));
  std::vector<unsigned char> buf;
  for (const Bag& bag : bags) {
    bag.validate();
    detail::write_u32(out, static_cast<uint32_t>(bag.id));
    char label = static_cast<char>(bag.bag_label);
    out.write(&label, 1);
    detail::write_u32(out, static_cast<uint32_t>(bag.instances.size()));
    for (size_t i = 0; i < bag.instances.size(); ++i) {
      const Instance& inst = bag.instances[i];
      if (inst.height != h || inst.width != w) throw UsageError("write_bags: mixed image sizes");
      PerturbClass cls = parse_perturb(inst.meta.count("class") ? inst.meta.at("class") : "healthy");
      int components =
          inst.meta.count("components") ? std::stoi(inst.meta.at("components")) : 0;
      unsigned char head[4] = {static_cast<unsigned char>(cls),
                               static_cast<unsigned char>(bag.aux_labels[i]),
                               static_cast<unsigned char>(components & 0xff),
                               static_cast<unsigned char>((components >> 8) & 0xff)};
      out.write(reinterpret_cast<const char*>(head), 4);
      buf.resize(inst.pixels.size());
      for (size_t p = 0; p < buf.size(); ++p)
        buf[p] = static_cast<unsigned char>(
            std::lround(std::clamp(inst.pixels[p], 0.0, 1.0) * 255.0));
      out.write(reinterpret_cast<const char*>(buf.data()),
                static_cast<std::streamsize>(buf.size()));
    }
  }
}

inline std::vector<Bag> read_bags(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path + ": cannot open");
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::string(magic, 4) != "ATMB")
    throw FormatError(path + ": not a bag archive");
  uint32_t version = detail::read_u32(in, path);
  if (version != 1) throw FormatError(path + ": unsupported archive version " +
                                      std::to_string(version));
  uint32_t count = detail::read_u32(in, path);
  int h = static_cast<int>(detail::read_u32(in, path));
  int w = static_cast<int>(detail::read_u32(in, path));
  if (h <= 0 || w <= 0 || h > 4096 || w > 4096)
    throw FormatError(path + ": implausible image size");

  std::vector<Bag> bags;
  bags.reserve(count);
  std::vector<unsigned char> buf(static_cast<size_t>(h) * w);
  for (uint32_t b = 0; b < count; ++b) {
    Bag bag;
    bag.id = static_cast<int>(detail::read_u32(in, path));
    char label;
    in.read(&label, 1);
    if (in.gcount() != 1) throw FormatError(path + ": truncated archive");
    bag.bag_label = static_cast<unsigned char>(label);
    uint32_t n = detail::read_u32(in, path);
    for (uint32_t i = 0; i < n; ++i) {
      unsigned char head[4];
      in.read(reinterpret_cast<char*>(head), 4);
      if (in.gcount() != 4) throw FormatError(path + ": truncated archive");
      in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
      if (in.gcount() != static_cast<std::streamsize>(buf.size()))
        throw FormatError(path + ": truncated archive in bag " + std::to_string(bag.id));
      Instance inst;
      inst.height = h;
      inst.width = w;
      inst.pixels.resize(buf.size());
      for (size_t p = 0; p < buf.size(); ++p) inst.pixels[p] = buf[p] / 255.0;
      inst.meta["class"] = perturb_name(static_cast<PerturbClass>(head[0]));
      inst.meta["components"] = std::to_string(head[2] | (head[3] << 8));
      bag.aux_labels.push_back(head[1]);
      bag.instances.push_back(std::move(inst));
    }
    bag.validate();
    bags.push_back(std::move(bag));
  }
  return bags;
}

}  // namespace atmil
