#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "vdd/data.hpp"
#include "vdd/errors.hpp"
#include "vdd/task.hpp"

// Dataset layout on disk: <root>/<domain_name>/<split>/<class_id>/<NNNNN>.ppm
// with class_id directories named by decimal raw class ids. Images are
// binary netpbm (P6 color / P5 gray, maxval 255).
namespace vdd {

namespace fs = std::filesystem;

inline void write_ppm(const std::string& path, const ImageTensor& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> row(static_cast<size_t>(img.width) * 3);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        const float v = img.channels == 3 ? img.at(y, x, c) : img.at(y, x, 0);
        row[x * 3 + c] =
            static_cast<unsigned char>(std::lround(std::clamp(v, 0.f, 1.f) * 255.f));
      }
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
}

namespace detail {

inline int pnm_token(std::istream& in) {
  // Skips whitespace and '#' comments, then reads one non-negative integer.
  int ch = in.get();
  while (ch == '#' || std::isspace(ch)) {
    if (ch == '#')
      while (ch != '\n' && ch != EOF) ch = in.get();
    ch = in.get();
  }
  int value = 0;
  while (std::isdigit(ch)) {
    value = value * 10 + (ch - '0');
    ch = in.get();
  }
  return value;
}

}  // namespace detail

inline ImageTensor read_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("missing file " + path);
  char p = 0, kind = 0;
  in.get(p);
  in.get(kind);
  if (p != 'P' || (kind != '5' && kind != '6'))
    throw DataError("unsupported raster format in " + path + " (need binary P5/P6)");
  const int channels = kind == '6' ? 3 : 1;
  const int w = detail::pnm_token(in);
  const int h = detail::pnm_token(in);
  const int maxval = detail::pnm_token(in);
  if (w <= 0 || h <= 0 || maxval != 255) throw DataError("bad PNM header in " + path);
  ImageTensor img(h, w, channels);
  std::vector<unsigned char> raw(static_cast<size_t>(w) * h * channels);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!in) throw DataError("truncated image " + path);
  for (size_t i = 0; i < raw.size(); ++i) img.pix[i] = raw[i] / 255.f;
  return img;
}

// Bilinear resize plus gray->RGB replication to the canonical shape.
inline ImageTensor to_canonical(const ImageTensor& src, int hw) {
  ImageTensor dst(hw, hw, 3);
  const float sy = static_cast<float>(src.height) / hw;
  const float sx = static_cast<float>(src.width) / hw;
  for (int y = 0; y < hw; ++y) {
    const float fy = (y + 0.5f) * sy - 0.5f;
    const int y0 = std::clamp(static_cast<int>(std::floor(fy)), 0, src.height - 1);
    const int y1 = std::min(y0 + 1, src.height - 1);
    const float wy = std::clamp(fy - y0, 0.f, 1.f);
    for (int x = 0; x < hw; ++x) {
      const float fx = (x + 0.5f) * sx - 0.5f;
      const int x0 = std::clamp(static_cast<int>(std::floor(fx)), 0, src.width - 1);
      const int x1 = std::min(x0 + 1, src.width - 1);
      const float wx = std::clamp(fx - x0, 0.f, 1.f);
      for (int c = 0; c < 3; ++c) {
        const int sc = src.channels == 3 ? c : 0;
        const float top = src.at(y0, x0, sc) * (1 - wx) + src.at(y0, x1, sc) * wx;
        const float bot = src.at(y1, x0, sc) * (1 - wx) + src.at(y1, x1, sc) * wx;
        dst.at(y, x, c) = top * (1 - wy) + bot * wy;
      }
    }
  }
  return dst;
}

inline void export_dataset(const std::string& root, const std::string& domain_name,
                           const DomainDataset& ds) {
  if (!ds.raw_labels) throw DataError("export needs raw class ids");
  std::map<int, int> counters;
  const fs::path base = fs::path(root) / domain_name / split_name(ds.split);
  for (int i = 0; i < ds.size(); ++i) {
    const int raw = (*ds.raw_labels)[i];
    const fs::path dir = base / std::to_string(raw);
    fs::create_directories(dir);
    char name[16];
    std::snprintf(name, sizeof(name), "%05d.ppm", counters[raw]++);
    write_ppm((dir / name).string(), ds.images[i]);
  }
}

// Loads one domain from the documented layout. Source domains keep only the
// classes the task assigns to them and fail when an owned class has no
// samples. Target classes outside the known set collapse to the unknown
// index; target train data is blinded (no `labels`).
inline DomainDataset load_external_domain(const std::string& root, const std::string& domain_name,
                                          const GmdaTask& task, int domain_index, Split split,
                                          int image_hw = 32) {
  const fs::path base = fs::path(root) / domain_name / split_name(split);
  if (!fs::exists(base)) throw DataError("missing dataset directory " + base.string());
  const bool is_target = domain_index == task.target_index();

  DomainDataset ds;
  ds.domain_index = domain_index;
  ds.split = split;
  ds.height = ds.width = image_hw;
  ds.channels = 3;
  std::vector<int> labels, hidden, raw_ids;

  std::vector<fs::path> class_dirs;
  for (const auto& entry : fs::directory_iterator(base))
    if (entry.is_directory()) class_dirs.push_back(entry.path());
  std::sort(class_dirs.begin(), class_dirs.end());

  for (const auto& dir : class_dirs) {
    int raw = 0;
    try {
      raw = std::stoi(dir.filename().string());
    } catch (const std::exception&) {
      throw DataError("class directory is not a decimal id: " + dir.string());
    }
    int mapped;
    if (task.knows_raw(raw)) {
      mapped = task.to_internal(raw);
      if (!is_target && !task.source_owns(domain_index, mapped)) continue;  // filtered out
    } else {
      if (!is_target)
        throw DataError("label " + std::to_string(raw) + " outside task in " + dir.string());
      mapped = task.unknown_index();
    }
    std::vector<fs::path> files;
    for (const auto& f : fs::directory_iterator(dir))
      if (f.is_regular_file()) files.push_back(f.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      ds.images.push_back(to_canonical(read_pnm(f.string()), image_hw));
      labels.push_back(mapped);
      hidden.push_back(mapped);
      raw_ids.push_back(raw);
    }
  }

  if (!is_target) {
    for (int cls : task.source_classes(domain_index))
      if (std::find(labels.begin(), labels.end(), cls) == labels.end())
        throw DataError(domain_name + " owns class " + std::to_string(task.to_raw(cls)) +
                        " but the directory has no samples of it");
  }

  ds.raw_labels = std::move(raw_ids);
  ds.hidden_labels = std::move(hidden);
  if (!is_target) ds.labels = std::move(labels);
  return ds;
}

// Horizontal concatenation of equally sized tiles into one row image.
inline ImageTensor tile_row(const std::vector<const ImageTensor*>& tiles, int gap = 2) {
  const int h = tiles[0]->height, w = tiles[0]->width;
  ImageTensor row(h, static_cast<int>(tiles.size()) * (w + gap) - gap, 3);
  row.pix.assign(row.pix.size(), 1.f);
  for (size_t t = 0; t < tiles.size(); ++t)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c)
          row.at(y, static_cast<int>(t) * (w + gap) + x, c) =
              tiles[t]->channels == 3 ? tiles[t]->at(y, x, c) : tiles[t]->at(y, x, 0);
  return row;
}

inline ImageTensor stack_rows(const std::vector<ImageTensor>& rows, int gap = 2) {
  const int w = rows[0].width, h = rows[0].height;
  ImageTensor grid(static_cast<int>(rows.size()) * (h + gap) - gap, w, 3);
  grid.pix.assign(grid.pix.size(), 1.f);
  for (size_t r = 0; r < rows.size(); ++r)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c)
          grid.at(static_cast<int>(r) * (h + gap) + y, x, c) = rows[r].at(y, x, c);
  return grid;
}

}  // namespace vdd
