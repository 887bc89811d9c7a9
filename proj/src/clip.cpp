#include "drst/clip.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "drst/errors.hpp"

namespace drst {

namespace fs = std::filesystem;

namespace {

unsigned char quantize(float v) {
  float c = std::min(1.0f, std::max(0.0f, v));
  return (unsigned char)std::lround(255.0f * c);
}

void write_pnm(const fs::path& file, const Tensor& t, int frame, int channels,
               const char* magic) {
  int h = t.dim(2), w = t.dim(3);
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot open " + file.string() + " for writing");
  out << magic << "\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> row((std::size_t)w * channels);
  const float* d = t.data();
  std::size_t plane = (std::size_t)t.dim(1) * h * w;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c)
        row[(std::size_t)x * channels + c] =
            quantize(d[(std::size_t)c * plane + ((std::size_t)frame * h + y) * w + x]);
    out.write((const char*)row.data(), (std::streamsize)row.size());
  }
  if (!out) throw IoError("short write to " + file.string());
}

// Header token reader that skips whitespace and # comment lines.
int pnm_int(std::istream& in, const fs::path& file) {
  for (;;) {
    int ch = in.peek();
    if (ch == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(ch)) {
      in.get();
    } else {
      break;
    }
  }
  int v;
  if (!(in >> v)) throw IoError("bad header in " + file.string());
  return v;
}

Tensor read_pnm(const fs::path& file, int channels, const char* magic) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open " + file.string());
  char m0 = 0, m1 = 0;
  in.get(m0);
  in.get(m1);
  if (m0 != magic[0] || m1 != magic[1])
    throw IoError("wrong magic in " + file.string());
  int w = pnm_int(in, file);
  int h = pnm_int(in, file);
  int maxval = pnm_int(in, file);
  if (maxval != 255) throw IoError("unsupported maxval in " + file.string());
  in.get();  // single whitespace before the raster
  std::vector<unsigned char> raw((std::size_t)w * h * channels);
  in.read((char*)raw.data(), (std::streamsize)raw.size());
  if (in.gcount() != (std::streamsize)raw.size())
    throw IoError("truncated raster in " + file.string());
  Tensor t = Tensor::zeros({channels, 1, h, w});
  float* d = t.data();
  std::size_t plane = (std::size_t)h * w;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c)
        d[(std::size_t)c * plane + (std::size_t)y * w + x] =
            (float)raw[((std::size_t)y * w + x) * channels + c] / 255.0f;
  return t;
}

std::string frame_name(int i, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%03d.%s", i, ext);
  return buf;
}

}  // namespace

void write_ppm(const fs::path& file, const Tensor& rgb, int frame) {
  if (rgb.rank() != 4 || rgb.dim(0) != 3)
    throw DimensionError("ppm writer expects 3 x T x H x W, got " + shape_str(rgb.shape()));
  write_pnm(file, rgb, frame, 3, "P6");
}

void write_pgm(const fs::path& file, const Tensor& depth, int frame) {
  if (depth.rank() != 4 || depth.dim(0) != 1)
    throw DimensionError("pgm writer expects 1 x T x H x W, got " + shape_str(depth.shape()));
  write_pnm(file, depth, frame, 1, "P5");
}

Tensor read_ppm(const fs::path& file) { return read_pnm(file, 3, "P6"); }
Tensor read_pgm(const fs::path& file) { return read_pnm(file, 1, "P5"); }

void save_clip_store(const fs::path& dir, const std::vector<Clip>& clips) {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const Clip& c = clips[i];
    if (c.rgb.rank() != 4 || c.depth.rank() != 4 || c.depth.dim(1) != c.rgb.dim(1))
      throw DimensionError("clip " + std::to_string(i) + " has inconsistent planes");
    char name[32];
    std::snprintf(name, sizeof name, "clip_%05d", (int)i);
    fs::path cdir = dir / name;
    fs::create_directories(cdir);
    {
      std::ofstream lab(cdir / "label.txt");
      lab << c.label << "\n";
      if (!lab) throw IoError("cannot write label in " + cdir.string());
    }
    for (int t = 0; t < c.frames(); ++t) {
      write_ppm(cdir / frame_name(t, "ppm"), c.rgb, t);
      write_pgm(cdir / frame_name(t, "pgm"), c.depth, t);
    }
  }
}

std::vector<Clip> load_clip_store(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("no clip store at " + dir.string());
  std::vector<fs::path> cdirs;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory() && e.path().filename().string().rfind("clip_", 0) == 0)
      cdirs.push_back(e.path());
  std::sort(cdirs.begin(), cdirs.end());
  if (cdirs.empty()) throw IoError("empty clip store at " + dir.string());

  std::vector<Clip> clips;
  clips.reserve(cdirs.size());
  for (const auto& cdir : cdirs) {
    Clip c;
    {
      std::ifstream lab(cdir / "label.txt");
      if (!(lab >> c.label)) throw IoError("missing label in " + cdir.string());
    }
    std::vector<Tensor> rgb_frames, depth_frames;
    for (int t = 0;; ++t) {
      fs::path ppm = cdir / frame_name(t, "ppm");
      if (!fs::exists(ppm)) break;
      rgb_frames.push_back(read_ppm(ppm));
      depth_frames.push_back(read_pgm(cdir / frame_name(t, "pgm")));
    }
    if (rgb_frames.empty()) throw IoError("no frames in " + cdir.string());
    c.rgb = concat(rgb_frames, 1);
    c.depth = concat(depth_frames, 1);
    clips.push_back(std::move(c));
  }
  return clips;
}

}  // namespace drst
