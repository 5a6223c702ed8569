#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "search_nne/search_model.hpp"

namespace search_nne {

/// A panel read from CSV together with its identifiers.
struct PanelData {
  Dataset data;
  std::vector<std::string> consumer_ids;  ///< In first-appearance order.
};

/// Long-format CSV: consumer_id, product_id, xp_*, xa_*, xc_*, y_search, y_buy.
/// Rows of a consumer need not be contiguous; products keep file order.
/// Throws ParseError with the line number, or ValidationError naming the consumer.
PanelData read_panel_csv(std::istream& in);
PanelData read_panel_csv_file(const std::string& path);

/// Writes with 17 significant digits so values round-trip exactly.
void write_panel_csv(std::ostream& out, const Dataset& data);
void write_panel_csv_file(const std::string& path, const Dataset& data);

}  // namespace search_nne
