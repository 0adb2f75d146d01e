// dcnbench: benchmark runner, verification driver, roofline reporter and
// golden-fixture generator.

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dcnv4/dcnv4.hpp"

namespace {

constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<std::int64_t> parse_dims(const std::string& text, std::size_t count) {
  std::vector<std::int64_t> dims;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, 'x')) {
    std::size_t used = 0;
    long long v = 0;
    try {
      v = std::stoll(part, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != part.size() || v < 1) throw UsageError("bad shape '" + text + "'");
    dims.push_back(v);
  }
  if (dims.size() != count) {
    throw UsageError("shape '" + text + "' needs " + std::to_string(count) + " dimensions");
  }
  return dims;
}

std::string sha256_hex(const std::vector<std::uint8_t>& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw dcnv4::Error("sha256 failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int{digest[i]};
  return os.str();
}

struct BenchArgs {
  std::vector<std::string> ops{"dcn-opt"};
  std::string grid;
  std::vector<std::string> shapes;
  std::int64_t batch = 0;
  int groups = 0;
  int kernel = 3;
  std::string dtype = "f32";
  int reps = 10;
  int warmup = 3;
  std::uint64_t seed = 0;
  int dprime = 8;
  std::string stage;
  std::string csv;
};

int cmd_bench(const BenchArgs& a) {
  for (const auto& op : a.ops) {
    if (!dcnv4::is_bench_op(op)) throw UsageError("unknown operator '" + op + "'");
  }
  if (!a.grid.empty() && !a.shapes.empty()) throw UsageError("--grid and --shape are exclusive");

  std::vector<dcnv4::Shape> shapes;
  if (!a.shapes.empty()) {
    for (const auto& s : a.shapes) {
      const auto d = parse_dims(s, 4);
      shapes.push_back({d[0], d[1], d[2], d[3]});
    }
  } else {
    try {
      shapes = dcnv4::ShapeGrid::by_name(a.grid.empty() ? "standard" : a.grid).shapes;
    } catch (const dcnv4::ConfigError& e) {
      throw UsageError(e.what());
    }
  }
  if (a.batch > 0) {
    for (auto& s : shapes) s.n = a.batch;
  }

  dcnv4::BenchCell base;
  base.groups = a.groups;
  base.kernel_size = a.kernel;
  base.d_prime = a.dprime;
  base.seed = a.seed;
  base.protocol = {a.warmup, a.reps};
  try {
    base.dtype = dcnv4::parse_element_type(a.dtype);
    if (!a.stage.empty()) base.stage = dcnv4::parse_stage(a.stage);
    base.protocol.validate();
  } catch (const dcnv4::ConfigError& e) {
    throw UsageError(e.what());
  }

  std::vector<dcnv4::BenchRecord> rows;
  for (const auto& op : a.ops) {
    for (const auto& s : shapes) {
      auto cell = base;
      cell.op = op;
      cell.shape = s;
      const auto rec = dcnv4::run_bench_cell(cell);
      if (!rec) {
        std::cerr << "skipped " << op << " at " << s.to_string() << ": more than " << dcnv4::kMaxAttentionTokens
                  << " tokens\n";
        continue;
      }
      if (rec->anomaly) {
        std::cerr << "warning: " << op << " at " << s.to_string() << " has p90 > 10x median\n";
      }
      rows.push_back(*rec);
    }
  }

  const std::string text = dcnv4::to_csv(rows);
  if (a.csv.empty()) {
    std::cout << text;
  } else {
    std::ofstream out(a.csv, std::ios::trunc);
    if (!out) throw dcnv4::Error("cannot write '" + a.csv + "'");
    out << text;
  }
  return 0;
}

int cmd_verify(const dcnv4::VerifyOptions& opt) {
  const auto report = dcnv4::run_verify(opt);
  std::cout << "verify seed=" << opt.seed << " cases=" << opt.cases << '\n' << report.render();
  if (report.passed()) return 0;
  if (const auto s = report.first_failing_seed()) std::cerr << "first failing seed: " << *s << '\n';
  return 1;
}

int cmd_roofline(const std::vector<std::string>& shape_args, int groups, int kernel, const std::string& format) {
  if (kernel < 1) throw UsageError("--kernel must be >= 1");
  std::vector<dcnv4::RooflineShape> shapes;
  std::vector<std::vector<std::int64_t>> dims;
  if (shape_args.empty()) {
    for (const auto& s : dcnv4::ShapeGrid::standard().shapes) dims.push_back({s.h, s.w, s.c});
  }
  for (const auto& s : shape_args) dims.push_back(parse_dims(s, 3));
  for (const auto& d : dims) {
    const std::int64_t g = groups > 0 ? groups : dcnv4::assumed_groups(d[2]);
    shapes.push_back({d[0], d[1], d[2], g, std::int64_t{kernel} * kernel});
    dcnv4::roofline(shapes.back());
  }
  std::cout << dcnv4::intensity_table(shapes, format == "csv" ? dcnv4::TableFormat::csv : dcnv4::TableFormat::text);
  return 0;
}

int cmd_fixtures(const std::filesystem::path& out, bool force) {
  namespace fs = std::filesystem;
  const auto set = dcnv4::golden_fixture_set();
  if (!force) {
    for (const auto& [name, t] : set) {
      if (fs::exists(out / (name + ".dcnt"))) {
        std::cerr << "refusing to overwrite " << (out / (name + ".dcnt")).string() << " (use --force)\n";
        return kExitUsage;
      }
    }
    if (fs::exists(out / "SHA256SUMS")) {
      std::cerr << "refusing to overwrite " << (out / "SHA256SUMS").string() << " (use --force)\n";
      return kExitUsage;
    }
  }
  fs::create_directories(out);
  std::vector<std::pair<std::string, std::string>> manifest;
  for (const auto& [name, t] : set) {
    const auto file = name + ".dcnt";
    const auto bytes = dcnv4::encode_fixture(t);
    std::ofstream f(out / file, std::ios::binary | std::ios::trunc);
    if (!f) throw dcnv4::Error("cannot write '" + (out / file).string() + "'");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    manifest.emplace_back(file, sha256_hex(bytes));
  }
  std::sort(manifest.begin(), manifest.end());
  std::ofstream sums(out / "SHA256SUMS", std::ios::trunc);
  for (const auto& [file, digest] : manifest) {
    sums << digest << "  " << file << '\n';
    std::cout << digest << "  " << file << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deformable aggregation operators: benchmarks, verification, roofline, fixtures"};
  app.require_subcommand(1);

  BenchArgs bench;
  auto* b = app.add_subcommand("bench", "Time operators over a shape grid and emit CSV");
  b->add_option("--op", bench.ops, "Operators: dcn-ref, dcn-opt, dcnv3-module, dcnv4-module, dwconv, attention")
      ->delimiter(',');
  b->add_option("--grid", bench.grid, "Shape grid: standard | highres");
  b->add_option("--shape", bench.shapes, "Explicit NxHxWxC shape (repeatable)");
  b->add_option("--batch", bench.batch, "Override the batch size of every shape");
  b->add_option("--groups", bench.groups, "Groups (default C/32)");
  b->add_option("--kernel", bench.kernel, "Kernel size");
  b->add_option("--dtype", bench.dtype, "f32 | f16");
  b->add_option("--reps", bench.reps, "Timed repetitions (>= 10)");
  b->add_option("--warmup", bench.warmup, "Discarded warmup runs (>= 3)");
  b->add_option("--seed", bench.seed, "Input seed");
  b->add_option("--dprime", bench.dprime, "Channels per work item in the optimized kernel");
  b->add_option("--stage", bench.stage, "Optimized-kernel stage for dcn-opt");
  b->add_option("--csv", bench.csv, "Write CSV to this file instead of stdout");

  dcnv4::VerifyOptions verify;
  auto* v = app.add_subcommand("verify", "Run the randomized verification suites");
  v->add_option("--seed", verify.seed, "Run seed");
  v->add_option("--cases", verify.cases, "Equivalence cases")->check(CLI::PositiveNumber);
  v->add_flag("--inject-fault", verify.inject_fault)->group("");

  std::vector<std::string> roof_shapes;
  int roof_groups = 0;
  int roof_kernel = 3;
  std::string roof_format = "text";
  auto* r = app.add_subcommand("roofline", "Print FLOPs, memory access and arithmetic intensity");
  r->add_option("--shape", roof_shapes, "HxWxC shape (repeatable; default: the standard grid)");
  r->add_option("--groups", roof_groups, "Groups (default C/16)");
  r->add_option("--kernel", roof_kernel, "Kernel size");
  r->add_option("--format", roof_format, "text | csv")->check(CLI::IsMember({"text", "csv"}));

  std::string fixtures_out;
  bool fixtures_force = false;
  auto* f = app.add_subcommand("fixtures", "Regenerate the golden fixture files");
  f->add_option("--out", fixtures_out, "Output directory")->required();
  f->add_flag("--force", fixtures_force, "Overwrite existing files");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*b) return cmd_bench(bench);
    if (*v) return cmd_verify(verify);
    if (*r) return cmd_roofline(roof_shapes, roof_groups, roof_kernel, roof_format);
    if (*f) return cmd_fixtures(fixtures_out, fixtures_force);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const dcnv4::ConfigError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const dcnv4::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
