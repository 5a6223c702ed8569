#include "search_nne/panel_io.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <unordered_map>

#include "search_nne/error.hpp"

namespace search_nne {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma - start)));
    if (comma == std::string_view::npos) return out;
    start = comma + 1;
  }
}

double parse_number(std::string_view s, const std::string& column, long line) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v))
    throw ParseError("column '" + column + "': '" + std::string(s) + "' is not a finite number", line);
  return v;
}

std::uint8_t parse_flag(std::string_view s, const std::string& column, long line) {
  if (s == "0") return 0;
  if (s == "1") return 1;
  throw ParseError("column '" + column + "': expected 0 or 1, got '" + std::string(s) + "'", line);
}

struct Row {
  std::vector<double> prod, ads, cons;
  std::uint8_t search = 0, buy = 0;
  long line = 0;
};

}  // namespace

PanelData read_panel_csv(std::istream& in) {
  std::string text;
  long line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, text)) {
    ++line_no;
    if (!trim(text).empty()) break;
  }
  if (trim(text).empty()) throw ParseError("empty file; expected a header row", std::max(line_no, 1L));
  for (auto f : split(text)) header.emplace_back(f);

  int col_consumer = -1, col_search = -1, col_buy = -1;
  std::vector<int> col_prod, col_ads, col_cons;
  AttributeNames names;
  for (int c = 0; c < static_cast<int>(header.size()); ++c) {
    const std::string& h = header[c];
    auto take = [&](int& slot) {
      if (slot >= 0) throw ParseError("duplicate column '" + h + "'", line_no);
      slot = c;
    };
    if (h == "consumer_id") take(col_consumer);
    else if (h == "product_id") continue;
    else if (h == "y_search") take(col_search);
    else if (h == "y_buy") take(col_buy);
    else if (h.rfind("xp_", 0) == 0) col_prod.push_back(c), names.prod.push_back(h);
    else if (h.rfind("xa_", 0) == 0) col_ads.push_back(c), names.ads.push_back(h);
    else if (h.rfind("xc_", 0) == 0) col_cons.push_back(c), names.cons.push_back(h);
    else throw ParseError("unrecognized column '" + h + "' (attribute columns need an xp_, xa_ or xc_ prefix)", line_no);
  }
  if (col_consumer < 0) throw ParseError("missing column 'consumer_id'", line_no);
  if (col_search < 0) throw ParseError("missing column 'y_search'", line_no);
  if (col_buy < 0) throw ParseError("missing column 'y_buy'", line_no);

  PanelData out;
  std::unordered_map<std::string, int> index;
  std::vector<std::vector<Row>> rows;
  while (std::getline(in, text)) {
    ++line_no;
    if (trim(text).empty()) continue;
    const auto fields = split(text);
    if (fields.size() != header.size())
      throw ParseError("expected " + std::to_string(header.size()) + " fields, found " +
                           std::to_string(fields.size()),
                       line_no);
    const std::string id(fields[col_consumer]);
    if (id.empty()) throw ParseError("empty consumer_id", line_no);
    auto [it, fresh] = index.try_emplace(id, static_cast<int>(rows.size()));
    if (fresh) {
      rows.emplace_back();
      out.consumer_ids.push_back(id);
    }
    Row r;
    r.line = line_no;
    for (int c : col_prod) r.prod.push_back(parse_number(fields[c], header[c], line_no));
    for (int c : col_ads) r.ads.push_back(parse_number(fields[c], header[c], line_no));
    for (int c : col_cons) r.cons.push_back(parse_number(fields[c], header[c], line_no));
    r.search = parse_flag(fields[col_search], "y_search", line_no);
    r.buy = parse_flag(fields[col_buy], "y_buy", line_no);
    rows[it->second].push_back(std::move(r));
  }
  if (rows.empty()) throw ParseError("no data rows", line_no);

  const int n = static_cast<int>(rows.size());
  const int J = static_cast<int>(rows.front().size());
  for (int i = 0; i < n; ++i)
    if (static_cast<int>(rows[i].size()) != J)
      throw ValidationError("consumer '" + out.consumer_ids[i] + "' has " +
                            std::to_string(rows[i].size()) + " rows but consumer '" +
                            out.consumer_ids.front() + "' has " + std::to_string(J) +
                            "; the panel must be rectangular");
  Dataset& d = out.data;
  d.names = names;
  d.x.n = n;
  d.x.J = J;
  d.x.prod.resize(static_cast<Eigen::Index>(n) * J, col_prod.size());
  d.x.ads.resize(static_cast<Eigen::Index>(n) * J, col_ads.size());
  d.x.cons.resize(n, col_cons.size());
  d.y = Outcomes(n, J);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < J; ++j) {
      const Row& r = rows[i][j];
      const Eigen::Index row = static_cast<Eigen::Index>(i) * J + j;
      for (std::size_t k = 0; k < r.prod.size(); ++k) d.x.prod(row, k) = r.prod[k];
      for (std::size_t k = 0; k < r.ads.size(); ++k) d.x.ads(row, k) = r.ads[k];
      for (std::size_t k = 0; k < r.cons.size(); ++k) {
        if (j == 0)
          d.x.cons(i, k) = r.cons[k];
        else if (r.cons[k] != d.x.cons(i, k))
          throw ValidationError("consumer '" + out.consumer_ids[i] + "': column '" + names.cons[k] +
                                "' varies within the consumer (line " + std::to_string(r.line) + ")");
      }
      d.y.search[row] = r.search;
      d.y.buy[row] = r.buy;
    }
    int searches = 0, buys = 0;
    for (int j = 0; j < J; ++j) {
      const Eigen::Index row = static_cast<Eigen::Index>(i) * J + j;
      searches += d.y.search[row];
      buys += d.y.buy[row];
      if (d.y.buy[row] && !d.y.search[row])
        throw ValidationError("consumer '" + out.consumer_ids[i] + "' buys a product it did not search");
    }
    if (searches == 0)
      throw ValidationError("consumer '" + out.consumer_ids[i] + "' has no search (the first search is free)");
    if (buys > 1) throw ValidationError("consumer '" + out.consumer_ids[i] + "' buys more than one product");
  }
  return out;
}

PanelData read_panel_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open panel file " + path);
  return read_panel_csv(in);
}

void write_panel_csv(std::ostream& out, const Dataset& d) {
  const AttributeNames names =
      d.names.prod.size() == static_cast<std::size_t>(d.x.prod.cols()) &&
              d.names.ads.size() == static_cast<std::size_t>(d.x.ads.cols()) &&
              d.names.cons.size() == static_cast<std::size_t>(d.x.cons.cols())
          ? d.names
          : AttributeNames::defaults(d.dims());
  out << "consumer_id,product_id";
  for (const auto& s : names.prod) out << ',' << s;
  for (const auto& s : names.ads) out << ',' << s;
  for (const auto& s : names.cons) out << ',' << s;
  out << ",y_search,y_buy\n";
  char buf[32];
  auto num = [&](double v) {
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    out << ',' << std::string_view(buf, res.ptr - buf);
  };
  for (int i = 0; i < d.x.n; ++i)
    for (int j = 0; j < d.x.J; ++j) {
      const Eigen::Index row = static_cast<Eigen::Index>(i) * d.x.J + j;
      out << i + 1 << ',' << j + 1;
      for (Eigen::Index k = 0; k < d.x.prod.cols(); ++k) num(d.x.prod(row, k));
      for (Eigen::Index k = 0; k < d.x.ads.cols(); ++k) num(d.x.ads(row, k));
      for (Eigen::Index k = 0; k < d.x.cons.cols(); ++k) num(d.x.cons(i, k));
      out << ',' << int(d.y.search[row]) << ',' << int(d.y.buy[row]) << '\n';
    }
}

void write_panel_csv_file(const std::string& path, const Dataset& d) {
  const std::string tmp = path + ".partial";
  {
    std::ofstream out(tmp);
    if (!out) throw Error("cannot open " + tmp + " for writing");
    write_panel_csv(out, d);
    if (!out) throw Error("failed writing " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw Error("cannot move panel to " + path);
}

}  // namespace search_nne
