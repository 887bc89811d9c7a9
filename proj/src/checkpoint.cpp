#include "drst/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace drst {

static constexpr char kMagic[4] = {'D', 'R', 'S', 'T'};
static constexpr std::uint8_t kVersion = 1;

static void write_u32(std::ostream& os, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b, 4);
}

static std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw IoError("checkpoint truncated");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

static void write_f32s(std::ostream& os, const std::vector<float>& v) {
  for (float f : v) {
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    write_u32(os, u);
  }
}

static void read_f32s(std::istream& is, std::vector<float>& v) {
  for (float& f : v) {
    const std::uint32_t u = read_u32(is);
    std::memcpy(&f, &u, 4);
  }
}

void save_checkpoint(const std::filesystem::path& path, const ParamRegistry& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path.string());
  os.write(kMagic, 4);
  os.put(static_cast<char>(kVersion));
  for (const auto& [name, t] : params.items) {
    write_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape()) write_u32(os, static_cast<std::uint32_t>(d));
    write_f32s(os, t.values());
  }
  if (!os) throw IoError("checkpoint write failed: " + path.string());
}

struct Record {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

static std::vector<Record> read_all(const std::filesystem::path& path, bool with_data) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw IoError("not a checkpoint file: " + path.string());
  const int version = is.get();
  if (version != kVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  std::vector<Record> recs;
  while (true) {
    is.peek();
    if (is.eof()) break;
    Record r;
    const std::uint32_t nlen = read_u32(is);
    r.name.resize(nlen);
    is.read(r.name.data(), nlen);
    if (!is) throw IoError("checkpoint truncated");
    const std::uint32_t rank = read_u32(is);
    std::size_t n = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const std::uint32_t d = read_u32(is);
      r.shape.push_back(static_cast<int>(d));
      n *= d;
    }
    if (with_data) {
      r.data.resize(n);
      read_f32s(is, r.data);
    } else {
      is.seekg(static_cast<std::streamoff>(n) * 4, std::ios::cur);
      if (!is) throw IoError("checkpoint truncated");
    }
    recs.push_back(std::move(r));
  }
  return recs;
}

void load_checkpoint(const std::filesystem::path& path, ParamRegistry& params) {
  auto recs = read_all(path, true);
  std::size_t matched = 0;
  for (auto& [name, t] : params.items) {
    const Record* hit = nullptr;
    for (const Record& r : recs)
      if (r.name == name) {
        hit = &r;
        break;
      }
    if (!hit) throw ParameterError("checkpoint is missing parameter " + name);
    if (hit->shape != t.shape())
      throw ParameterError("checkpoint shape mismatch for " + name + ": stored " +
                           shape_str(hit->shape) + ", model wants " + shape_str(t.shape()));
    t.values() = hit->data;
    ++matched;
  }
  if (matched != recs.size())
    throw ParameterError("checkpoint holds parameters the model does not");
}

std::vector<std::pair<std::string, Shape>> peek_checkpoint(const std::filesystem::path& path) {
  std::vector<std::pair<std::string, Shape>> out;
  for (Record& r : read_all(path, false)) out.emplace_back(std::move(r.name), std::move(r.shape));
  return out;
}

}  // namespace drst
