#include "popusense/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <vector>

#include "popusense/error.hpp"

namespace popusense::train {

namespace {

constexpr std::string_view kMagic = "POPUSENSE-CHECKPOINT";

struct BlockHeader {
  std::string name;
  std::vector<int> shape;
  std::size_t count() const {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
  }
};

struct BlockData {
  BlockHeader header;
  std::vector<double> values;
};

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void append_float(std::string& out, double v) {
  const float f = static_cast<float>(v);
  auto bits = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<char>(bits & 0xFFu));
    bits >>= 8;
  }
}

double read_float(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int i = 3; i >= 0; --i) bits = (bits << 8) | p[i];
  return static_cast<double>(std::bit_cast<float>(bits));
}

std::vector<BlockData> collect_blocks(const ModelBundle& b) {
  std::vector<BlockData> blocks;
  auto add_refs = [&blocks](const auto& refs) {
    for (const auto& r : refs) blocks.push_back({{r.name, r.shape}, {r.values.begin(), r.values.end()}});
  };
  add_refs(b.model.params());
  if (b.popusense) add_refs(b.refiner.params());
  if (b.popusense && b.popusense->variant == context::Variant::wide) {
    const auto entries = b.bank.entries();
    BlockData bank{{"bank.entries", {static_cast<int>(entries.rows()), static_cast<int>(b.bank.dim())}}, {}};
    for (Eigen::Index r = 0; r < entries.rows(); ++r)
      for (Eigen::Index c = 0; c < entries.cols(); ++c) bank.values.push_back(entries(r, c));
    blocks.push_back(std::move(bank));
  }
  return blocks;
}

[[noreturn]] void corrupt(const std::string& what) { throw Error(Errc::CorruptCheckpoint, what); }

std::uint64_t parse_u64(const std::string& s, const std::string& key) {
  try {
    std::size_t used = 0;
    const auto v = std::stoull(s, &used);
    if (used != s.size()) corrupt("bad value for " + key);
    return v;
  } catch (const std::logic_error&) {
    corrupt("bad value for " + key);
  }
}

double parse_double(const std::string& s, const std::string& key) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) corrupt("bad value for " + key);
    return v;
  } catch (const std::logic_error&) {
    corrupt("bad value for " + key);
  }
}

}  // namespace

std::string serialize_checkpoint(const ModelBundle& b) {
  std::ostringstream head;
  head << kMagic << '\n';
  head << "version " << kCheckpointVersion << '\n';
  head << "configuration " << configuration_name(b.configuration) << '\n';
  head << "seed " << b.seed << '\n';
  head << "config_hash " << (b.config_hash.empty() ? "-" : b.config_hash) << '\n';
  head << "image_size " << b.model.image_size << '\n';
  head << "latent_channels " << b.model.latent_channels << '\n';
  head << "model_seed " << b.model.seed << '\n';
  head << "smoothing_sigma " << format_double(b.eval.smoothing_sigma) << '\n';
  head << "top_q " << format_double(b.eval.top_q) << '\n';
  head << "freeze_output_projection " << (b.freeze_output_projection ? 1 : 0) << '\n';
  if (b.popusense) {
    head << "popusense_variant " << context::variant_name(b.popusense->variant) << '\n';
    head << "popusense_k " << b.popusense->k << '\n';
    head << "popusense_layers " << b.popusense->layers << '\n';
    head << "popusense_bank_capacity " << b.popusense->bank_capacity << '\n';
    head << "refiner_seed " << b.refiner.seed << '\n';
  }
  const auto blocks = collect_blocks(b);
  for (const auto& blk : blocks) {
    head << "block " << blk.header.name;
    for (int d : blk.header.shape) head << ' ' << d;
    head << '\n';
  }
  head << "end\n";

  std::string out = head.str();
  for (const auto& blk : blocks)
    for (double v : blk.values) append_float(out, v);
  return out;
}

ModelBundle deserialize_checkpoint(const std::string& bytes) {
  std::size_t pos = 0;
  auto next_line = [&]() -> std::string {
    const auto nl = bytes.find('\n', pos);
    if (nl == std::string::npos) corrupt("truncated header");
    std::string line = bytes.substr(pos, nl - pos);
    pos = nl + 1;
    return line;
  };

  if (next_line() != kMagic) corrupt("not a checkpoint file");
  std::map<std::string, std::string> meta;
  std::vector<BlockHeader> headers;
  for (;;) {
    const std::string line = next_line();
    if (line == "end") break;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "block") {
      BlockHeader h;
      if (!(ls >> h.name)) corrupt("block without name");
      int d;
      while (ls >> d) {
        if (d < 0) corrupt("negative block dimension");
        h.shape.push_back(d);
      }
      headers.push_back(std::move(h));
    } else {
      std::string value;
      if (!(ls >> value)) corrupt("missing value for " + key);
      meta[key] = value;
    }
  }
  auto need = [&](const std::string& key) -> const std::string& {
    const auto it = meta.find(key);
    if (it == meta.end()) corrupt("missing field " + key);
    return it->second;
  };

  const auto version = parse_u64(need("version"), "version");
  if (version != static_cast<std::uint64_t>(kCheckpointVersion))
    throw Error(Errc::VersionMismatch,
                "checkpoint version " + std::to_string(version) + ", expected " + std::to_string(kCheckpointVersion));

  ModelBundle b;
  try {
    b.configuration = parse_configuration(need("configuration"));
  } catch (const Error&) {
    corrupt("unknown configuration");
  }
  b.seed = parse_u64(need("seed"), "seed");
  b.config_hash = need("config_hash") == "-" ? std::string{} : need("config_hash");
  b.eval.smoothing_sigma = parse_double(need("smoothing_sigma"), "smoothing_sigma");
  b.eval.top_q = parse_double(need("top_q"), "top_q");
  b.freeze_output_projection = parse_u64(need("freeze_output_projection"), "freeze_output_projection") != 0;
  const int image_size = static_cast<int>(parse_u64(need("image_size"), "image_size"));
  const int channels = static_cast<int>(parse_u64(need("latent_channels"), "latent_channels"));
  try {
    b.model = pdc::ModelParams::initialize(image_size, channels, parse_u64(need("model_seed"), "model_seed"));
  } catch (const Error& e) {
    corrupt(e.what());
  }

  if (b.configuration != Configuration::pdccore) {
    context::PopuSenseConfig cfg;
    try {
      cfg.variant = context::parse_variant(need("popusense_variant"));
    } catch (const Error&) {
      corrupt("unknown popusense variant");
    }
    cfg.k = parse_u64(need("popusense_k"), "popusense_k");
    cfg.layers = parse_u64(need("popusense_layers"), "popusense_layers");
    cfg.bank_capacity = parse_u64(need("popusense_bank_capacity"), "popusense_bank_capacity");
    if (cfg.layers < 1 || cfg.layers > 64) corrupt("implausible refiner depth");
    b.popusense = cfg;
    b.refiner = context::RefinerParams::initialize(channels, cfg.layers, parse_u64(need("refiner_seed"), "refiner_seed"));
    if (cfg.variant == context::Variant::wide) b.bank = context::MemoryBank(cfg.bank_capacity, channels);
  }

  // Expected layout from the reconstructed architecture; the bank block's
  // row count comes from the file.
  std::vector<BlockHeader> expected;
  for (const auto& r : b.model.params()) expected.push_back({r.name, r.shape});
  if (b.popusense)
    for (const auto& r : b.refiner.params()) expected.push_back({r.name, r.shape});
  const bool has_bank = b.popusense && b.popusense->variant == context::Variant::wide;
  if (headers.size() != expected.size() + (has_bank ? 1 : 0)) corrupt("unexpected number of blocks");
  for (std::size_t i = 0; i < expected.size(); ++i)
    if (headers[i].name != expected[i].name || headers[i].shape != expected[i].shape)
      corrupt("block " + std::to_string(i) + " is '" + headers[i].name + "', expected '" + expected[i].name + "'");
  if (has_bank) {
    const auto& h = headers.back();
    if (h.name != "bank.entries" || h.shape.size() != 2 || h.shape[1] != channels ||
        static_cast<std::size_t>(h.shape[0]) > b.popusense->bank_capacity)
      corrupt("bad bank block");
  }

  std::size_t total = 0;
  for (const auto& h : headers) total += h.count();
  if (bytes.size() - pos != total * 4)
    corrupt("payload has " + std::to_string(bytes.size() - pos) + " bytes, expected " + std::to_string(total * 4));

  const auto* data = reinterpret_cast<const unsigned char*>(bytes.data()) + pos;
  auto fill = [&data](auto refs) {
    for (auto& r : refs)
      for (auto& v : r.values) {
        v = read_float(data);
        data += 4;
      }
  };
  fill(b.model.params());
  if (b.popusense) fill(b.refiner.params());
  if (has_bank) {
    const auto rows = headers.back().shape[0];
    context::Matrix entries(rows, channels);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < channels; ++c) {
        entries(r, c) = read_float(data);
        data += 4;
      }
    b.bank.push(entries);
  }
  return b;
}

void save_checkpoint(const std::filesystem::path& path, const ModelBundle& bundle) {
  const std::string bytes = serialize_checkpoint(bundle);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Errc::IoError, "failed writing checkpoint " + path.string());
}

ModelBundle load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace popusense::train
