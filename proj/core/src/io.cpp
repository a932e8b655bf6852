#include "motun/io.hpp"

#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "motun/common.hpp"

namespace motun::io {

using nlohmann::json;
namespace fs = std::filesystem;

ParamTensor& NamedTensors::add(const std::string& name, ParamTensor t) {
  require(!has(name), Errc::model_contract, "duplicate tensor name: " + name);
  items.emplace_back(name, std::move(t));
  return items.back().second;
}

const ParamTensor* NamedTensors::find(const std::string& name) const {
  for (const auto& [n, t] : items)
    if (n == name) return &t;
  return nullptr;
}

ParamTensor* NamedTensors::find(const std::string& name) {
  for (auto& [n, t] : items)
    if (n == name) return &t;
  return nullptr;
}

const ParamTensor& NamedTensors::at(const std::string& name) const {
  const ParamTensor* t = find(name);
  require(t != nullptr, Errc::model_contract, "unknown tensor: " + name);
  return *t;
}

ParamTensor& NamedTensors::at(const std::string& name) {
  ParamTensor* t = find(name);
  require(t != nullptr, Errc::model_contract, "unknown tensor: " + name);
  return *t;
}

size_t NamedTensors::total_values() const {
  size_t n = 0;
  for (const auto& [name, t] : items) n += t.size();
  return n;
}

uint64_t content_hash(const NamedTensors& t) {
  uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* data, size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& [name, tensor] : t.items) {
    mix(name.data(), name.size());
    mix(tensor.w.data(), tensor.w.size() * sizeof(float));
  }
  return h;
}

namespace {

void write_u32(std::ofstream& out, uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

uint32_t read_u32(std::ifstream& in) {
  uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

std::string split_tag(const motion::CorpusEntry& e) {
  std::string s = e.forget ? "forget" : "retain";
  s += e.seen ? "-seen" : "-unseen";
  return s;
}

}  // namespace

void save_motion(const fs::path& path, const motion::MotionSequence& m) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), Errc::io_error, "cannot open for write: " + path.string());
  write_u32(out, static_cast<uint32_t>(m.length()));
  write_u32(out, static_cast<uint32_t>(m.width()));
  write_u32(out, static_cast<uint32_t>(m.layout.joint_count));
  for (uint8_t b : m.mask) out.put(b ? 1 : 0);
  std::vector<float> payload(m.frames.v.size());
  for (size_t i = 0; i < payload.size(); ++i) payload[i] = static_cast<float>(m.frames.v[i]);
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(float)));
  require(out.good(), Errc::io_error, "write failed: " + path.string());
}

motion::MotionSequence load_motion(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), Errc::io_error, "missing motion file: " + path.string());
  const uint32_t t = read_u32(in);
  const uint32_t f = read_u32(in);
  const uint32_t j = read_u32(in);
  motion::MotionSequence m;
  m.layout = motion::pose_layout(static_cast<int>(j));
  require(static_cast<int>(f) == m.layout.frame_width, Errc::io_error,
          "frame width mismatch in " + path.string());
  m.mask.resize(t);
  for (uint32_t i = 0; i < t; ++i) {
    char b = 0;
    in.get(b);
    m.mask[i] = b ? 1 : 0;
  }
  std::vector<float> payload(static_cast<size_t>(t) * f);
  in.read(reinterpret_cast<char*>(payload.data()),
          static_cast<std::streamsize>(payload.size() * sizeof(float)));
  require(in.good(), Errc::io_error, "truncated motion file: " + path.string());
  m.frames = Mat(static_cast<int>(t), static_cast<int>(f));
  for (size_t i = 0; i < payload.size(); ++i) m.frames.v[i] = static_cast<double>(payload[i]);
  motion::validate(m);
  return m;
}

void save_corpus(const fs::path& manifest, const std::vector<motion::CorpusEntry>& corpus) {
  const fs::path dir = manifest.parent_path();
  const fs::path motion_dir = dir / "motions";
  std::error_code ec;
  fs::create_directories(motion_dir, ec);
  std::ofstream out(manifest);
  require(out.good(), Errc::io_error, "cannot open for write: " + manifest.string());
  for (const auto& e : corpus) {
    const std::string rel = "motions/" + e.id + ".mot";
    save_motion(dir / rel, e.motion);
    json rec;
    rec["id"] = e.id;
    rec["caption"] = motion::join_tokens(e.caption);
    rec["level"] = e.level;
    rec["split"] = split_tag(e);
    rec["motion_file"] = rel;
    out << rec.dump() << "\n";
  }
  require(out.good(), Errc::io_error, "write failed: " + manifest.string());
}

std::vector<motion::CorpusEntry> load_corpus(const fs::path& manifest) {
  require_file(manifest, "corpus manifest");
  std::ifstream in(manifest);
  std::vector<motion::CorpusEntry> corpus;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json rec = json::parse(line);
    motion::CorpusEntry e;
    e.id = rec.at("id").get<std::string>();
    e.caption = motion::tokenize(rec.at("caption").get<std::string>());
    e.level = rec.at("level").get<int>();
    const std::string split = rec.at("split").get<std::string>();
    e.forget = split.rfind("forget", 0) == 0;
    e.seen = split.find("unseen") == std::string::npos;
    e.family = e.id.substr(0, e.id.find('-'));
    e.motion = load_motion(manifest.parent_path() / rec.at("motion_file").get<std::string>());
    corpus.push_back(std::move(e));
  }
  return corpus;
}

void save_checkpoint(const fs::path& path, const Checkpoint& ck) {
  json header;
  header["version"] = ck.version;
  header["kind"] = ck.kind;
  header["extra"] = ck.extra.empty() ? json(nullptr) : json::parse(ck.extra);
  json sites = json::array();
  uint64_t offset = 0;
  for (const auto& [name, t] : ck.tensors.items) {
    json s;
    s["name"] = name;
    s["rows"] = t.rows;
    s["cols"] = t.cols;
    s["dtype"] = "float32";
    s["offset"] = offset;
    sites.push_back(s);
    offset += t.size() * sizeof(float);
  }
  header["sites"] = sites;
  const std::string hs = header.dump();

  std::ofstream out(path, std::ios::binary);
  require(out.good(), Errc::io_error, "cannot open for write: " + path.string());
  out.write("MOTUNCP1", 8);
  const uint64_t hlen = hs.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& [name, t] : ck.tensors.items)
    out.write(reinterpret_cast<const char*>(t.w.data()),
              static_cast<std::streamsize>(t.size() * sizeof(float)));
  require(out.good(), Errc::io_error, "write failed: " + path.string());
}

Checkpoint load_checkpoint(const fs::path& path) {
  require_file(path, "checkpoint");
  std::ifstream in(path, std::ios::binary);
  char magic[8] = {};
  in.read(magic, 8);
  require(in.good() && std::memcmp(magic, "MOTUNCP1", 8) == 0, Errc::io_error,
          "not a checkpoint file: " + path.string());
  uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string hs(hlen, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(hlen));
  require(in.good(), Errc::io_error, "truncated checkpoint header: " + path.string());
  json header = json::parse(hs);
  Checkpoint ck;
  ck.version = header.at("version").get<int>();
  ck.kind = header.at("kind").get<std::string>();
  if (!header.at("extra").is_null()) ck.extra = header.at("extra").dump();
  for (const auto& s : header.at("sites")) {
    ParamTensor t(s.at("rows").get<int>(), s.at("cols").get<int>());
    in.read(reinterpret_cast<char*>(t.w.data()),
            static_cast<std::streamsize>(t.size() * sizeof(float)));
    ck.tensors.add(s.at("name").get<std::string>(), std::move(t));
  }
  require(in.good(), Errc::io_error, "truncated checkpoint payload: " + path.string());
  return ck;
}

void require_file(const fs::path& path, const std::string& what) {
  require(fs::exists(path), Errc::io_error, "missing " + what + ": " + path.string());
}

}  // namespace motun::io
