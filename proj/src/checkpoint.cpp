#include "avasd/checkpoint.hpp"

#include <array>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

namespace avasd {
namespace {

constexpr const char* kMagic = "avasd-checkpoint";
constexpr int kVersion = 1;

std::string fmt(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    v = ((v & 0xffU) << 24) | ((v & 0xff00U) << 8) | ((v >> 8) & 0xff00U) | (v >> 24);
  }
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelParams<float>& params,
                     const CheckpointMeta& meta) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
  out << kMagic << ' ' << kVersion << '\n'
      << "audio_dim " << params.dims.audio_dim << '\n'
      << "video_dim " << params.dims.video_dim << '\n'
      << "embed_dim " << params.dims.embed_dim << '\n'
      << "cross_attention " << (params.cross_attention ? 1 : 0) << '\n'
      << "seed " << meta.seed << '\n'
      << "loss_mode " << meta.loss_mode << '\n'
      << "lambda";
  for (double l : meta.lambda.lambda) out << ' ' << fmt(l);
  out << '\n'
      << "avil_source "
      << to_string(meta.avil_source) << '\n';
  for (int p = 0; p < kParamCount; ++p) {
    out << "block " << kParamNames[p] << ' ' << params.blocks[p].rows() << ' '
        << params.blocks[p].cols() << '\n';
  }
  out << "end\n";
  for (const auto& block : params.blocks) {
    for (ad::Index i = 0; i < block.size(); ++i) {
      const std::uint32_t bits = to_le(std::bit_cast<std::uint32_t>(block.data()[i]));
      out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
  }
  if (!out) throw CheckpointError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(path.string() + ": cannot open");
  Checkpoint ck;
  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string& msg) {
    throw CheckpointError(path.string() + ":" + std::to_string(line_no) + ": " + msg);
  };

  std::getline(in, line);
  ++line_no;
  {
    std::istringstream is(line);
    std::string magic;
    int version = 0;
    if (!(is >> magic >> version) || magic != kMagic) fail("not a checkpoint file");
    if (version != kVersion) fail("unsupported checkpoint version " + std::to_string(version));
  }

  std::vector<std::pair<ad::Index, ad::Index>> shapes;
  bool have_dims[3] = {false, false, false};
  while (std::getline(in, line)) {
    ++line_no;
    if (line == "end") break;
    std::istringstream is(line);
    std::string key;
    is >> key;
    if (key == "audio_dim") {
      is >> ck.params.dims.audio_dim;
      have_dims[0] = true;
    } else if (key == "video_dim") {
      is >> ck.params.dims.video_dim;
      have_dims[1] = true;
    } else if (key == "embed_dim") {
      is >> ck.params.dims.embed_dim;
      have_dims[2] = true;
    } else if (key == "cross_attention") {
      int v = 1;
      is >> v;
      ck.params.cross_attention = v != 0;
    } else if (key == "seed") {
      is >> ck.meta.seed;
    } else if (key == "loss_mode") {
      is >> ck.meta.loss_mode;
    } else if (key == "lambda") {
      for (double& l : ck.meta.lambda.lambda) is >> l;
    } else if (key == "avil_source") {
      std::string s;
      is >> s;
      if (s != "frontend" && s != "cross-attended") fail("unknown avil_source '" + s + "'");
      ck.meta.avil_source = avil_source_from_string(s);
    } else if (key == "block") {
      std::string name;
      ad::Index r = 0, c = 0;
      is >> name >> r >> c;
      const std::size_t idx = shapes.size();
      if (idx >= kParamNames.size() || name != kParamNames[idx]) {
        fail("unexpected block '" + name + "'");
      }
      shapes.emplace_back(r, c);
    } else {
      fail("unknown header key '" + key + "'");
    }
    if (is.fail()) fail("malformed value for '" + key + "'");
  }
  if (line != "end") fail("header not terminated by 'end'");
  if (!(have_dims[0] && have_dims[1] && have_dims[2])) fail("missing model dimensions");
  if (shapes.size() != static_cast<std::size_t>(kParamCount)) fail("wrong number of blocks");

  for (int p = 0; p < kParamCount; ++p) {
    const auto expected = param_shape(static_cast<Param>(p), ck.params.dims);
    const auto [r, c] = shapes[p];
    if (r != expected.rows || c != expected.cols) {
      throw CheckpointError(path.string() + ": block " + std::string(kParamNames[p]) +
                            " has shape " + std::to_string(r) + "x" + std::to_string(c) +
                            ", expected " + std::to_string(expected.rows) + "x" +
                            std::to_string(expected.cols));
    }
    auto& block = ck.params.blocks[p];
    block.resize(r, c);
    for (ad::Index i = 0; i < block.size(); ++i) {
      std::uint32_t bits;
      if (!in.read(reinterpret_cast<char*>(&bits), sizeof bits)) {
        throw CheckpointError(path.string() + ": truncated data in block " +
                              std::string(kParamNames[p]));
      }
      block.data()[i] = std::bit_cast<float>(to_le(bits));
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw CheckpointError(path.string() + ": trailing bytes after parameter data");
  }
  return ck;
}

}  // namespace avasd
