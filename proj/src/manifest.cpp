#include "ttv/manifest.hpp"

#include <charconv>

#include "ttv/csv.hpp"
#include "ttv/errors.hpp"

namespace ttv {

namespace {

const std::vector<std::string> kBaseCols = {"frame_path", "trip_id", "direction", "capture_ts",
                                            "session_id"};
const std::vector<std::string> kLabelCols = {"eff_tt_s", "band"};
const std::vector<std::string> kLineageCols = {"source_frame_id", "actions", "magnitudes"};

std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  return std::string(buf, p);
}

}  // namespace

Manifest read_manifest(const std::string& path) {
  const auto table = csv::read_file(path);
  Manifest m;
  if (table.header.empty()) return m;

  const bool labeled = std::find(table.header.begin(), table.header.end(), "band") != table.header.end();
  const bool expanded =
      std::find(table.header.begin(), table.header.end(), "source_frame_id") != table.header.end();
  m.kind = expanded ? ManifestKind::Expanded : (labeled ? ManifestKind::Labeled : ManifestKind::Base);

  const auto c_path = table.col("frame_path");
  const auto c_trip = table.col("trip_id");
  const auto c_dir = table.col("direction");
  const auto c_ts = table.col("capture_ts");
  const auto c_sess = table.col("session_id");
  const auto c_tt = labeled ? table.col("eff_tt_s") : 0;
  const auto c_band = labeled ? table.col("band") : 0;
  const auto c_src = expanded ? table.col("source_frame_id") : 0;
  const auto c_act = expanded ? table.col("actions") : 0;
  const auto c_mag = expanded ? table.col("magnitudes") : 0;

  m.rows.reserve(table.rows.size());
  for (const auto& row : table.rows) {
    FrameRecord r;
    r.frame_path = row[c_path];
    r.trip_id = row[c_trip];
    r.direction = std::stoi(row[c_dir]);
    r.capture_ts = std::stoll(row[c_ts]);
    r.session_id = row[c_sess];
    if (labeled) {
      r.eff_tt_s = std::stod(row[c_tt]);
      r.band = parse_band(row[c_band]);
    }
    if (expanded) {
      r.source_frame_id = row[c_src];
      r.actions = row[c_act];
      r.magnitudes = row[c_mag];
    }
    m.rows.push_back(std::move(r));
  }
  return m;
}

void write_manifest(const std::string& path, const Manifest& manifest) {
  csv::Table table;
  table.header = kBaseCols;
  if (manifest.kind != ManifestKind::Base) {
    table.header.insert(table.header.end(), kLabelCols.begin(), kLabelCols.end());
  }
  if (manifest.kind == ManifestKind::Expanded) {
    table.header.insert(table.header.end(), kLineageCols.begin(), kLineageCols.end());
  }
  for (const auto& r : manifest.rows) {
    std::vector<std::string> row = {r.frame_path, r.trip_id, std::to_string(r.direction),
                                    std::to_string(r.capture_ts), r.session_id};
    if (manifest.kind != ManifestKind::Base) {
      if (!r.eff_tt_s || !r.band) {
        throw DataError("unlabeled row in labeled manifest: " + r.frame_path + "/" + r.trip_id);
      }
      row.push_back(format_double(*r.eff_tt_s));
      row.push_back(band_name(*r.band));
    }
    if (manifest.kind == ManifestKind::Expanded) {
      row.push_back(r.source_frame_id);
      row.push_back(r.actions);
      row.push_back(r.magnitudes);
    }
    table.rows.push_back(std::move(row));
  }
  csv::write_file(path, table);
}

}  // namespace ttv
