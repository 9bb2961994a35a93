#pragma once

// Dataset export/import.
//
// manifest.csv: comment lines starting with '#', then the header
//   scene_id,family,level,score,path
// one record per image; `path` is relative to the manifest directory.
// Pristine references are listed with family "pristine", level 0, score 1.
// Images are color PFM files (float32, little-endian), so pixels round-trip
// bit for bit; scores are written with 9 significant digits (exact for float).

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "priq/config.hpp"
#include "priq/error.hpp"
#include "priq/synth.hpp"

namespace priq::synth {

inline void write_pfm(const Image& img, const std::filesystem::path& path) {
  detail::check_image(img, "write_pfm");
  const std::size_t h = img.dim(1), w = img.dim(2);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << "PF\n" << w << ' ' << h << "\n-1.0\n";
  std::string row(w * 3 * 4, '\0');
  for (std::size_t y = h; y-- > 0;) {  // PFM stores rows bottom to top
    char* p = row.data();
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        std::uint32_t bits;
        const float v = img[(c * h + y) * w + x];
        std::memcpy(&bits, &v, 4);
        for (int b = 0; b < 4; ++b) *p++ = static_cast<char>((bits >> (8 * b)) & 0xFF);
      }
    }
    out.write(row.data(), static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

inline Image read_pfm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::string magic;
  std::size_t w = 0, h = 0;
  double scale = 0;
  in >> magic >> w >> h >> scale;
  in.get();
  if (magic != "PF" || w == 0 || h == 0) throw IoError("'" + path.string() + "' is not a color PFM file");
  if (scale >= 0) throw IoError("'" + path.string() + "': big-endian PFM is not supported");
  Image img({3, h, w});
  std::string row(w * 3 * 4, '\0');
  for (std::size_t y = h; y-- > 0;) {
    if (!in.read(row.data(), static_cast<std::streamsize>(row.size()))) throw IoError("'" + path.string() + "' is truncated");
    const char* p = row.data();
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(*p++)) << (8 * b);
        float v;
        std::memcpy(&v, &bits, 4);
        img[(c * h + y) * w + x] = v;
      }
    }
  }
  return img;
}

inline void export_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
  std::ofstream m(dir / "manifest.csv");
  if (!m) throw IoError("cannot write manifest in '" + dir.string() + "'");
  m << "# priq synthetic dataset v1\n"
    << "# score = (mean over RGB of global SSIM(pristine, image) + 1) / 2, constants c1=1e-4 c2=9e-4\n"
    << "# image_size = " << ds.image_size << '\n'
    << "scene_id,family,level,score,path\n";
  char buf[32];
  for (const auto& scene : ds.scenes) {
    char sub[32];
    std::snprintf(sub, sizeof sub, "scene_%03zu", scene.scene_id);
    fs::create_directories(dir / sub, ec);
    if (ec) throw IoError("cannot create '" + (dir / sub).string() + "'");
    const std::string pristine_rel = std::string(sub) + "/pristine.pfm";
    write_pfm(scene.pristine, dir / pristine_rel);
    m << scene.scene_id << ",pristine,0,1," << pristine_rel << '\n';
    for (const auto& im : scene.images) {
      const std::string rel = std::string(sub) + "/" + std::string(to_string(im.distortion.family)) + "_" +
                              std::to_string(im.distortion.level) + ".pfm";
      write_pfm(im.pixels, dir / rel);
      std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(im.score));
      m << scene.scene_id << ',' << to_string(im.distortion.family) << ',' << im.distortion.level << ',' << buf
        << ',' << rel << '\n';
    }
  }
  if (!m) throw IoError("manifest write failed in '" + dir.string() + "'");
}

inline Dataset import_dataset(const std::filesystem::path& dir) {
  const std::string text = read_text_file((dir / "manifest.csv").string());
  std::istringstream in(text);
  std::string line;
  Dataset ds;
  std::map<std::size_t, std::size_t> scene_slot;
  bool header = false;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (line.rfind("# image_size = ", 0) == 0) ds.image_size = std::stoul(line.substr(15));
      continue;
    }
    if (!header) {
      if (line != "scene_id,family,level,score,path") throw IoError("manifest: unexpected header '" + line + "'");
      header = true;
      continue;
    }
    const auto f = config_detail::split_list(line);
    if (f.size() != 5) throw IoError("manifest: line " + std::to_string(lineno) + " needs 5 fields");
    std::size_t scene_id = 0;
    int level = 0;
    float score = 0;
    try {
      scene_id = std::stoul(f[0]);
      level = std::stoi(f[2]);
      score = std::stof(f[3]);
    } catch (const std::logic_error&) {
      throw IoError("manifest: bad numeric field on line " + std::to_string(lineno));
    }
    auto [it, inserted] = scene_slot.emplace(scene_id, ds.scenes.size());
    if (inserted) {
      ds.scenes.emplace_back();
      ds.scenes.back().scene_id = scene_id;
    }
    Scene& scene = ds.scenes[it->second];
    Image pixels = read_pfm(dir / f[4]);
    if (f[1] == "pristine") {
      scene.pristine = std::move(pixels);
    } else {
      scene.images.push_back({std::move(pixels), scene_id, {parse_family(f[1]), level}, score});
    }
  }
  if (!header) throw IoError("manifest: missing header");
  return ds;
}

}  // namespace priq::synth
