#include "xpl/io/checkpoint.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>

#include "xpl/core/error.hpp"

namespace xpl::io {

using model::ParamGroup;
using model::PolicyModel;

namespace {

void put_f32(std::string& out, double v) {
  auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
}

double get_f32(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return static_cast<double>(std::bit_cast<float>(bits));
}

std::string shape_text(const nn::Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out;
}

nn::Shape parse_shape(const std::string& text) {
  nn::Shape s;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, 'x')) s.push_back(std::stoul(part));
  return s;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorCode::kIo, "write failed for " + path.string());
}

std::string hash_of(const std::string& a, const std::string& b) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  require(ctx && EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) == 1 &&
              EVP_DigestUpdate(ctx.get(), a.data(), a.size()) == 1 &&
              EVP_DigestUpdate(ctx.get(), b.data(), b.size()) == 1 && EVP_DigestFinal_ex(ctx.get(), md, &len) == 1,
          ErrorCode::kIo, "SHA-256 failed");
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return hex.str();
}

std::string groups_text(std::span<const ParamGroup> groups) {
  std::string out;
  for (std::size_t i = 0; i < groups.size(); ++i) out += (i ? "," : "") + std::string(model::to_string(groups[i]));
  return out;
}

std::string tag_value(const std::string& line, const std::string& tag) {
  return line.size() > tag.size() && line.compare(0, tag.size() + 1, tag + " ") == 0 ? line.substr(tag.size() + 1)
                                                                                    : std::string();
}

}  // namespace

bool CheckpointInfo::has_group(ParamGroup g) const { return std::find(groups.begin(), groups.end(), g) != groups.end(); }

std::string sha256_hex(std::span<const unsigned char> bytes) {
  return hash_of(std::string(reinterpret_cast<const char*>(bytes.data()), bytes.size()), std::string());
}

std::string backbone_hash(const PolicyModel& model) {
  std::string manifest, payload;
  const model::ParamStore& store = model.params();
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (store.group(i) != ParamGroup::kBackbone) continue;
    manifest += store[i].name + " " + shape_text(store[i].value.shape()) + "\n";
    for (double v : store[i].value.values()) put_f32(payload, v);
  }
  return hash_of(manifest, payload);
}

std::vector<ParamGroup> default_groups(const PolicyModel& model) {
  if (model.adapter_mode() == model::AdapterMode::kNone) {
    return {ParamGroup::kBackbone, ParamGroup::kDecoder, ParamGroup::kHeads, ParamGroup::kAdapters};
  }
  return {ParamGroup::kDecoder, ParamGroup::kHeads, ParamGroup::kAdapters};
}

void save_checkpoint(const PolicyModel& model, const std::filesystem::path& path, std::span<const ParamGroup> groups,
                     const std::map<std::string, std::string>& meta) {
  require(!groups.empty(), ErrorCode::kInvalidArgument, "checkpoint needs at least one parameter group");
  auto wanted = [&](ParamGroup g) { return std::find(groups.begin(), groups.end(), g) != groups.end(); };
  const model::BackboneConfig& c = model.config();
  std::ostringstream m;
  m << std::setprecision(17);
  m << "xpl-checkpoint " << kCheckpointVersion << "\n";
  m << "profile " << model::to_string(c.profile) << "\n";
  m << "d_model " << c.d_model << "\n";
  m << "n_heads " << c.n_heads << "\n";
  m << "n_encoder_layers " << c.n_encoder_layers << "\n";
  m << "ff_hidden " << c.ff_hidden << "\n";
  m << "tanh_clip " << c.tanh_clip << "\n";
  m << "problem " << vrp::to_string(model.problem()) << "\n";
  m << "adapter " << model::to_string(model.adapter_mode()) << "\n";
  m << "groups " << groups_text(groups) << "\n";
  m << "backbone_hash " << backbone_hash(model) << "\n";
  for (const auto& [k, v] : meta) {
    require(k.find_first_of(" \n") == std::string::npos && v.find('\n') == std::string::npos,
            ErrorCode::kInvalidArgument, "metadata keys are single words and values single lines");
    m << "meta " << k << " " << v << "\n";
  }
  std::string payload;
  const model::ParamStore& store = model.params();
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (!wanted(store.group(i))) continue;
    m << "param " << store[i].name << " " << model::to_string(store.group(i)) << " "
      << shape_text(store[i].value.shape()) << " " << payload.size() << "\n";
    for (double v : store[i].value.values()) put_f32(payload, v);
  }
  m << "payload_bytes " << payload.size() << "\n";
  const std::string head = m.str();
  const std::string file = head + "content_hash " + hash_of(head, payload) + "\nend\n" + payload;
  write_file(path, file);
}

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  const std::string marker = "\nend\n";
  const std::size_t end = bytes.find(marker);
  require(end != std::string::npos, ErrorCode::kCorruptCheckpoint, "checkpoint manifest is not terminated");
  const std::string manifest = bytes.substr(0, end + 1);
  const std::string payload = bytes.substr(end + marker.size());

  CheckpointInfo info;
  std::istringstream in(manifest);
  std::string line;
  std::string hashed;
  bool saw_header = false, saw_hash = false;
  try {
    while (std::getline(in, line)) {
      if (!saw_hash && line.rfind("content_hash ", 0) != 0) hashed += line + "\n";
      std::istringstream ls(line);
      std::string key;
      ls >> key;
      if (key == "xpl-checkpoint") {
        int version = 0;
        ls >> version;
        require(version == kCheckpointVersion, ErrorCode::kCheckpointIncompatible,
                "unsupported checkpoint version " + std::to_string(version));
        saw_header = true;
      } else if (key == "profile") {
        std::string v;
        ls >> v;
        info.config.profile = model::parse_profile(v);
      } else if (key == "d_model") {
        ls >> info.config.d_model;
      } else if (key == "n_heads") {
        ls >> info.config.n_heads;
      } else if (key == "n_encoder_layers") {
        ls >> info.config.n_encoder_layers;
      } else if (key == "ff_hidden") {
        ls >> info.config.ff_hidden;
      } else if (key == "tanh_clip") {
        ls >> info.config.tanh_clip;
      } else if (key == "problem") {
        std::string v;
        ls >> v;
        info.problem = vrp::parse_problem(v);
      } else if (key == "adapter") {
        std::string v;
        ls >> v;
        info.adapter = model::parse_adapter_mode(v);
      } else if (key == "groups") {
        std::string v, g;
        ls >> v;
        std::stringstream gs(v);
        while (std::getline(gs, g, ',')) info.groups.push_back(model::parse_param_group(g));
      } else if (key == "backbone_hash") {
        ls >> info.backbone_hash;
      } else if (key == "meta") {
        std::string k;
        ls >> k;
        info.meta[k] = tag_value(line, "meta " + k);
      } else if (key == "param") {
        ParamEntry e;
        std::string group, shape;
        ls >> e.name >> group >> shape >> e.offset;
        e.group = model::parse_param_group(group);
        e.shape = parse_shape(shape);
        info.params.push_back(std::move(e));
      } else if (key == "payload_bytes") {
        ls >> info.payload_bytes;
      } else if (key == "content_hash") {
        ls >> info.content_hash;
        saw_hash = true;
      } else if (!key.empty()) {
        fail(ErrorCode::kCorruptCheckpoint, "unknown manifest line '" + line + "'");
      }
      require(!ls.fail(), ErrorCode::kCorruptCheckpoint, "malformed manifest line '" + line + "'");
    }
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kCheckpointIncompatible) throw;
    fail(ErrorCode::kCorruptCheckpoint, std::string("bad checkpoint manifest: ") + e.what());
  } catch (const std::exception& e) {
    fail(ErrorCode::kCorruptCheckpoint, std::string("bad checkpoint manifest: ") + e.what());
  }
  require(saw_header && saw_hash, ErrorCode::kCorruptCheckpoint, "checkpoint manifest is incomplete");
  require(payload.size() == info.payload_bytes, ErrorCode::kCorruptCheckpoint, "payload length mismatch");
  require(hash_of(hashed, payload) == info.content_hash, ErrorCode::kCorruptCheckpoint,
          "content hash mismatch in " + path.string());
  std::size_t expect = 0;
  for (const ParamEntry& e : info.params) {
    require(e.offset == expect, ErrorCode::kCorruptCheckpoint, "parameter offsets are not contiguous");
    expect += nn::shape_size(e.shape) * 4;
  }
  require(expect == info.payload_bytes, ErrorCode::kCorruptCheckpoint, "manifest shapes do not cover the payload");
  return info;
}

namespace {

void fill_from(const CheckpointInfo& info, const std::string& payload, PolicyModel& into) {
  require(into.config() == info.config, ErrorCode::kCheckpointIncompatible, "backbone configuration mismatch");
  require(into.problem() == info.problem && into.adapter_mode() == info.adapter, ErrorCode::kCheckpointIncompatible,
          "checkpoint problem or adapter mode does not match the model");
  model::ParamStore& store = into.params();
  std::size_t listed = 0;
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (!info.has_group(store.group(i))) continue;
    ++listed;
  }
  require(listed == info.params.size(), ErrorCode::kCheckpointIncompatible, "parameter inventory mismatch");
  for (const ParamEntry& e : info.params) {
    const auto idx = store.find(e.name);
    require(idx.has_value() && store.group(*idx) == e.group && store[*idx].value.shape() == e.shape,
            ErrorCode::kCheckpointIncompatible, "unexpected parameter " + e.name);
    const auto* p = reinterpret_cast<const unsigned char*>(payload.data()) + e.offset;
    for (double& v : store[*idx].value.values()) {
      v = get_f32(p);
      p += 4;
    }
  }
}

std::string payload_of(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  return bytes.substr(bytes.find("\nend\n") + 5);
}

}  // namespace

PolicyModel load_checkpoint(const std::filesystem::path& path, const PolicyModel* backbone) {
  const CheckpointInfo info = read_checkpoint_info(path);
  PolicyModel m(info.problem, info.config, info.adapter);
  if (!info.has_group(ParamGroup::kBackbone)) {
    require(backbone != nullptr, ErrorCode::kCheckpointIncompatible,
            "checkpoint stores no backbone; the paired backbone checkpoint is required");
    require(backbone->config() == info.config, ErrorCode::kCheckpointIncompatible, "backbone configuration mismatch");
    require(backbone_hash(*backbone) == info.backbone_hash, ErrorCode::kCheckpointIncompatible,
            "backbone does not match the hash declared by the checkpoint");
    for (std::size_t i = 0; i < m.params().size(); ++i) {
      if (m.params().group(i) != ParamGroup::kBackbone) continue;
      const auto j = backbone->params().find(m.params()[i].name);
      require(j.has_value(), ErrorCode::kCheckpointIncompatible, "backbone lacks " + m.params()[i].name);
      m.params()[i].value = backbone->params()[*j].value;
    }
  }
  fill_from(info, payload_of(path), m);
  if (info.has_group(ParamGroup::kBackbone)) {
    require(backbone_hash(m) == info.backbone_hash, ErrorCode::kCorruptCheckpoint, "backbone hash mismatch");
  }
  model::apply_freezing(m, info.adapter == model::AdapterMode::kNone ? model::FinetuneMode::kFull
                           : info.adapter == model::AdapterMode::kInside ? model::FinetuneMode::kInside
                           : info.adapter == model::AdapterMode::kSide   ? model::FinetuneMode::kSide
                                                                         : model::FinetuneMode::kLora);
  return m;
}

void load_checkpoint_into(const std::filesystem::path& path, PolicyModel& into) {
  const CheckpointInfo info = read_checkpoint_info(path);
  if (!info.has_group(ParamGroup::kBackbone)) {
    require(backbone_hash(into) == info.backbone_hash, ErrorCode::kCheckpointIncompatible,
            "model backbone does not match the hash declared by the checkpoint");
  }
  fill_from(info, payload_of(path), into);
}

void save_tensors(const std::filesystem::path& path, std::span<const nn::Tensor> tensors) {
  std::ostringstream head;
  head << "xpl-tensors 1\ncount " << tensors.size() << "\n";
  std::string payload;
  for (const nn::Tensor& t : tensors) {
    head << "tensor " << (t.shape().empty() ? std::string("scalar") : shape_text(t.shape())) << "\n";
    for (double v : t.values()) {
      auto bits = std::bit_cast<std::uint64_t>(v);
      for (int i = 0; i < 8; ++i) payload.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
    }
  }
  head << "end\n";
  write_file(path, head.str() + payload);
}

std::vector<nn::Tensor> load_tensors(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  const std::size_t end = bytes.find("\nend\n");
  require(end != std::string::npos, ErrorCode::kCorruptCheckpoint, "tensor file is not terminated");
  std::istringstream in(bytes.substr(0, end + 1));
  std::string line, key;
  std::vector<nn::Shape> shapes;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    ls >> key;
    if (key == "tensor") {
      std::string s;
      ls >> s;
      shapes.push_back(s == "scalar" ? nn::Shape{} : parse_shape(s));
    }
  }
  std::size_t at = end + 5;
  std::vector<nn::Tensor> out;
  for (const nn::Shape& s : shapes) {
    nn::Tensor t(s);
    require(at + t.size() * 8 <= bytes.size(), ErrorCode::kCorruptCheckpoint, "tensor file is truncated");
    for (double& v : t.values()) {
      std::uint64_t bits = 0;
      for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[at + i])) << (8 * i);
      v = std::bit_cast<double>(bits);
      at += 8;
    }
    out.push_back(std::move(t));
  }
  require(at == bytes.size(), ErrorCode::kCorruptCheckpoint, "tensor file has trailing bytes");
  return out;
}

}  // namespace xpl::io
