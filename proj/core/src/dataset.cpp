#include <fmt/format.h>

#include <sstream>

#include "depthref/io_formats.hpp"

namespace depthref {

std::string DatasetEntry::name() const {
  return std::filesystem::path(left).parent_path().generic_string();
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t tab = line.find('\t', start);
    out.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

double parse_positive(const std::string& key, const std::string& text,
                      const std::filesystem::path& path) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used == text.size() && v > 0.0) return v;
  } catch (const std::logic_error&) {
  }
  throw FormatError(fmt::format("{}: bad value '{}' for {}", path.string(), text, key));
}

}  // namespace

std::string format_manifest(const Manifest& manifest) {
  std::string out = fmt::format("baseline_m={}\tfocal_x_px={}", manifest.rig.baseline_m,
                                manifest.rig.focal_x_px);
  if (manifest.d_max) out += fmt::format("\td_max={}", *manifest.d_max);
  out += '\n';
  for (const auto& e : manifest.entries) {
    out += fmt::format("{}\t{}\t{}\t{}\t{}\t{}\n", e.left, e.right, e.z_gt, e.d_gt, e.valid,
                       e.d_baseline.value_or("-"));
  }
  return out;
}

void write_manifest(const Manifest& manifest) {
  write_file_atomic(manifest.root / kManifestName, format_manifest(manifest));
}

Manifest read_manifest(const std::filesystem::path& path) {
  const auto file = std::filesystem::is_directory(path) ? path / kManifestName : path;
  const std::string text = read_file_bytes(file);
  Manifest m;
  m.root = file.parent_path();
  if (m.root.empty()) m.root = ".";

  std::istringstream lines(text);
  std::string line;
  if (!std::getline(lines, line)) throw FormatError(fmt::format("{}: empty manifest", file.string()));
  bool have_b = false;
  bool have_f = false;
  for (const auto& field : split_tabs(line)) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) {
      throw FormatError(fmt::format("{}: bad header field '{}'", file.string(), field));
    }
    const std::string key = field.substr(0, eq);
    const std::string value = field.substr(eq + 1);
    if (key == "baseline_m") {
      m.rig.baseline_m = parse_positive(key, value, file);
      have_b = true;
    } else if (key == "focal_x_px") {
      m.rig.focal_x_px = parse_positive(key, value, file);
      have_f = true;
    } else if (key == "d_max") {
      m.d_max = static_cast<int>(parse_positive(key, value, file));
    } else {
      throw FormatError(fmt::format("{}: unknown header key '{}'", file.string(), key));
    }
  }
  if (!have_b || !have_f) {
    throw FormatError(fmt::format("{}: header must carry baseline_m and focal_x_px", file.string()));
  }

  std::size_t line_no = 1;
  while (std::getline(lines, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cols = split_tabs(line);
    if (cols.size() != 6) {
      throw FormatError(
          fmt::format("{}:{}: expected 6 columns, got {}", file.string(), line_no, cols.size()));
    }
    DatasetEntry e{cols[0], cols[1], cols[2], cols[3], cols[4], std::nullopt};
    if (cols[5] != "-") e.d_baseline = cols[5];
    m.entries.push_back(std::move(e));
  }
  return m;
}

LoadedSample load_sample(const Manifest& manifest, std::size_t index) {
  const DatasetEntry& e = manifest.entries.at(index);
  LoadedSample s;
  s.name = e.name();
  s.left = read_pnm(manifest.resolve(e.left));
  s.right = read_pnm(manifest.resolve(e.right));
  s.z_gt = read_pfm(manifest.resolve(e.z_gt), FieldRole::depth);
  s.d_gt = read_pfm(manifest.resolve(e.d_gt), FieldRole::disparity);
  std::size_t w = 0;
  std::size_t h = 0;
  s.valid = read_mask_pgm(manifest.resolve(e.valid), w, h);
  if (e.d_baseline) s.d_baseline = read_pfm(manifest.resolve(*e.d_baseline), FieldRole::disparity);

  const auto check = [&](std::size_t cw, std::size_t ch, const char* what) {
    if (cw != s.left.width() || ch != s.left.height()) {
      throw FormatError(fmt::format("sample {}: {} dimensions {}x{} differ from left image {}x{}",
                                    s.name, what, cw, ch, s.left.width(), s.left.height()));
    }
  };
  check(s.right.width(), s.right.height(), "right image");
  check(s.z_gt.width(), s.z_gt.height(), "z_gt");
  check(s.d_gt.width(), s.d_gt.height(), "d_gt");
  check(w, h, "valid mask");
  if (s.d_baseline) check(s.d_baseline->width(), s.d_baseline->height(), "d_baseline");
  // Ground truth counts as defined only where valid.pgm says so.
  for (std::size_t i = 0; i < s.valid.size(); ++i) {
    if (s.valid[i]) continue;
    s.z_gt.invalidate(i);
    s.d_gt.invalidate(i);
  }
  return s;
}

void store_baseline_disparity(Manifest& manifest, std::size_t index, const ScalarField& disparity) {
  DatasetEntry& e = manifest.entries.at(index);
  const std::string rel = e.name() + "/d_baseline.pfm";
  write_pfm(disparity, manifest.resolve(rel));
  e.d_baseline = rel;
}

void ingest_external_disparity(Manifest& manifest, std::size_t index,
                               const std::filesystem::path& pfm_path) {
  const DatasetEntry& e = manifest.entries.at(index);
  const ScalarField external = read_pfm(pfm_path, FieldRole::disparity);
  std::size_t w = 0;
  std::size_t h = 0;
  read_mask_pgm(manifest.resolve(e.valid), w, h);
  if (external.width() != w || external.height() != h) {
    throw FormatError(fmt::format("ingest: {} is {}x{} but sample {} is {}x{}", pfm_path.string(),
                                  external.width(), external.height(), e.name(), w, h));
  }
  store_baseline_disparity(manifest, index, external);
  write_manifest(manifest);
}

}  // namespace depthref
