#include "dfnet/dataset.hpp"

#include <algorithm>
#include <filesystem>

#include "dfnet/png_io.hpp"

namespace dfnet {

namespace fs = std::filesystem;

namespace {

// masks are stored as 0/255 grayscale; snap to {0,1}
Tensor<float> snap_mask(Tensor<float> m) {
  for (auto& v : m.data_mut()) v = (v >= 0.5f) ? 1.0f : 0.0f;
  return m;
}

}  // namespace

std::vector<std::string> list_png_names(const std::string& dir) {
  if (!fs::is_directory(dir)) throw IoError(dir + " is not a directory");
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png")
      names.push_back(entry.path().stem().string());
  }
  std::sort(names.begin(), names.end());
  return names;
}

Dataset load_dataset(const std::string& root, bool require_masks) {
  if (!fs::is_directory(root)) throw IoError(root + " is not a directory");
  std::vector<std::string> group_names;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory() && fs::is_directory(entry.path() / "frames"))
      group_names.push_back(entry.path().filename().string());
  }
  std::sort(group_names.begin(), group_names.end());
  if (group_names.empty()) throw IoError(root + " contains no <group>/frames directories");

  Dataset ds;
  for (const auto& gname : group_names) {
    const fs::path gdir = fs::path(root) / gname;
    Group g;
    g.name = gname;
    const bool has_masks = fs::is_directory(gdir / "masks");
    if (require_masks && !has_masks) throw IoError((gdir / "masks").string() + " is missing");
    for (const auto& frame_name : list_png_names((gdir / "frames").string())) {
      Sample s;
      s.name = frame_name;
      s.image = read_png_rgb((gdir / "frames" / (frame_name + ".png")).string());
      if (has_masks) {
        const fs::path mpath = gdir / "masks" / (frame_name + ".png");
        if (!fs::exists(mpath)) {
          if (require_masks) throw IoError(mpath.string() + " is missing");
        } else {
          s.mask = snap_mask(read_png_gray(mpath.string()));
        }
      }
      g.frames.push_back(std::move(s));
    }
    if (g.frames.empty()) throw IoError(gdir.string() + " has no frames");
    ds.groups.push_back(std::move(g));
  }
  return ds;
}

}  // namespace dfnet
