#pragma once

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include "atmil/errors.hpp"
#include "atmil/model.hpp"
#include "atmil/params.hpp"

namespace atmil {

// Checkpoint container: line-oriented text, stable across versions.
//   atmil-checkpoint 1
//   encoder <field> <value>        (one line per EncoderConfig field)
//   params <count>
//   param <name> <partition> <rank> <dims...>
//   <values as C99 hex floats, 8 per line>   (lossless round-trip)
//   end

struct Checkpoint {
  EncoderConfig encoder;
  ParamSet params;
};

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError(path + ": cannot open for writing");
  out << "atmil-checkpoint 1\n";
  const EncoderConfig& e = ckpt.encoder;
  out << "encoder image_h " << e.image_h << "\n";
  out << "encoder image_w " << e.image_w << "\n";
  out << "encoder conv1_channels " << e.conv1_channels << "\n";
  out << "encoder conv1_kernel " << e.conv1_kernel << "\n";
  out << "encoder conv2_channels " << e.conv2_channels << "\n";
  out << "encoder conv2_kernel " << e.conv2_kernel << "\n";
  out << "encoder embedding_dim " << e.embedding_dim << "\n";
  out << "encoder attention_hidden " << e.attention_hidden << "\n";
  out << "encoder main_classes " << e.main_classes << "\n";
  out << "encoder aux_classes " << e.aux_classes << "\n";
  out << "params " << ckpt.params.count() << "\n";
  char buf[64];
  for (int i = 0; i < ckpt.params.count(); ++i) {
    const ParamEntry& p = ckpt.params.entry(i);
    out << "param " << p.name << " " << partition_name(p.partition) << " " << p.value.rank();
    for (int d : p.value.shape) out << " " << d;
    out << "\n";
    for (int64_t j = 0; j < p.value.size(); ++j) {
      std::snprintf(buf, sizeof(buf), "%a", p.value[j]);
      out << buf << ((j % 8 == 7 || j + 1 == p.value.size()) ? "\n" : " ");
    }
  }
  out << "end\n";
  if (!out) throw FormatError(path + ": write failed");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(path + ": cannot open");
  std::string line, tag;
  if (!std::getline(in, line) || line != "atmil-checkpoint 1")
    throw FormatError(path + ": not an atmil-checkpoint v1 file");

  Checkpoint ckpt;
  int param_count = -1;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    ls >> tag;
    if (tag == "encoder") {
      std::string field;
      int value;
      ls >> field >> value;
      if (ls.fail()) throw FormatError(path + ": malformed encoder line '" + line + "'");
      EncoderConfig& e = ckpt.encoder;
      if (field == "image_h") e.image_h = value;
      else if (field == "image_w") e.image_w = value;
      else if (field == "conv1_channels") e.conv1_channels = value;
      else if (field == "conv1_kernel") e.conv1_kernel = value;
      else if (field == "conv2_channels") e.conv2_channels = value;
      else if (field == "conv2_kernel") e.conv2_kernel = value;
      else if (field == "embedding_dim") e.embedding_dim = value;
      else if (field == "attention_hidden") e.attention_hidden = value;
      else if (field == "main_classes") e.main_classes = value;
      else if (field == "aux_classes") e.aux_classes = value;
      else throw FormatError(path + ": unknown encoder field '" + field + "'");
    } else if (tag == "params") {
      ls >> param_count;
      if (ls.fail() || param_count < 0) throw FormatError(path + ": bad params count");
      for (int i = 0; i < param_count; ++i) {
        if (!std::getline(in, line)) throw FormatError(path + ": truncated parameter list");
        std::istringstream ps(line);
        std::string ptag, name, partition;
        int rank;
        ps >> ptag >> name >> partition >> rank;
        if (ps.fail() || ptag != "param" || rank < 0 || rank > 8)
          throw FormatError(path + ": malformed param header '" + line + "'");
        Shape shape(static_cast<size_t>(rank));
        for (int d = 0; d < rank; ++d) ps >> shape[static_cast<size_t>(d)];
        if (ps.fail()) throw FormatError(path + ": malformed shape in '" + line + "'");
        Tensor t = Tensor::zeros(shape);
        int64_t read = 0;
        while (read < t.size()) {
          std::string token;
          if (!(in >> token))
            throw FormatError(path + ": truncated values for parameter '" + name + "'");
          char* endp = nullptr;
          t[read] = std::strtod(token.c_str(), &endp);
          if (endp == token.c_str())
            throw FormatError(path + ": bad value '" + token + "' in parameter '" + name + "'");
          ++read;
        }
        in.ignore(std::numeric_limits<std::streamsize>::max(), '\n');
        ckpt.params.add(name, parse_partition(partition), std::move(t));
      }
    } else if (tag == "end") {
      break;
    } else {
      throw FormatError(path + ": unknown checkpoint line '" + line + "'");
    }
  }
  if (param_count < 0) throw FormatError(path + ": missing params section");

  // the stored layout must match what this encoder config would create
  ckpt.encoder.validate();
  ParamSet reference = init_params(ckpt.encoder, 0);
  if (reference.count() != ckpt.params.count())
    throw FormatError(path + ": parameter count does not match the encoder config");
  for (int i = 0; i < reference.count(); ++i) {
    const ParamEntry& want = reference.entry(i);
    const ParamEntry& got = ckpt.params.entry(i);
    if (want.name != got.name || want.partition != got.partition ||
        want.value.shape != got.value.shape)
      throw FormatError(path + ": parameter '" + got.name +
                        "' does not match the encoder config layout");
  }
  return ckpt;
}

}  // namespace atmil
