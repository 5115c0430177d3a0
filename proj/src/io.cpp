#include "diffpbd/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace diffpbd {

using ordered_json = nlohmann::ordered_json;

std::string format_double(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw IoError(path + ": " + what);
}

double parse_double(const std::string& path, int line, std::string_view token) {
  double out = 0.0;
  auto res = std::from_chars(token.data(), token.data() + token.size(), out);
  if (res.ec != std::errc{} || res.ptr != token.data() + token.size()) {
    fail(path, "line " + std::to_string(line) + ": bad number '" + std::string(token) + "'");
  }
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(path, "cannot open for reading");
  return in;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(path, "cannot open for writing");
  return out;
}

const ordered_json& field(const std::string& path, const ordered_json& obj,
                          const std::string& key) {
  auto it = obj.find(key);
  if (it == obj.end()) fail(path, "missing field '" + key + "'");
  return *it;
}

Vec3 parse_vec3(const std::string& path, const ordered_json& j, const std::string& key) {
  const ordered_json& a = field(path, j, key);
  if (!a.is_array() || a.size() != 3) fail(path, "field '" + key + "' must be a 3-array");
  return Vec3{a[0].get<double>(), a[1].get<double>(), a[2].get<double>()};
}

ordered_json vec3_json(const Vec3& v) { return ordered_json::array({v.x, v.y, v.z}); }

Vec3 checked_unit(const std::string& path, const std::string& where, Vec3 v) {
  const double n = norm(v);
  if (std::abs(n - 1.0) > 1e-6) fail(path, where + ": axis not unit length (|a| = " + format_double(n) + ")");
  return (1.0 / n) * v;
}

// Symmetric positive definiteness via Sylvester's criterion.
void check_spd(const std::string& path, const std::string& where, const Mat3& m) {
  const double d1 = m(0, 0);
  const double d2 = m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
  const double d3 = determinant(m);
  if (!(d1 > 0.0 && d2 > 0.0 && d3 > 0.0)) {
    fail(path, where + ": inertia is not symmetric positive definite");
  }
}

}  // namespace

LoadedChain load_chain(const std::string& path) {
  std::ifstream in = open_in(path);
  ordered_json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    fail(path, std::string("JSON parse error: ") + e.what());
  }

  if (field(path, j, "format_version").get<int>() != kChainFormatVersion) {
    fail(path, "unsupported format_version");
  }

  LoadedChain out;
  if (j.contains("notes")) {
    for (const auto& n : j["notes"]) out.notes.push_back(n.get<std::string>());
  }

  const ordered_json& cfg = field(path, j, "config");
  out.config.dt = field(path, cfg, "dt").get<double>();
  if (!(out.config.dt > 0.0)) fail(path, "config.dt must be positive");
  out.config.gravity = parse_vec3(path, cfg, "gravity");
  const std::string solver = field(path, cfg, "solver").get<std::string>();
  if (solver == "gauss_seidel") {
    out.config.solver = SolverKind::gauss_seidel;
  } else if (solver == "jacobi") {
    out.config.solver = SolverKind::jacobi;
  } else {
    fail(path, "config.solver must be 'gauss_seidel' or 'jacobi'");
  }
  out.config.iterations = field(path, cfg, "iterations").get<int>();
  if (out.config.iterations < 1) fail(path, "config.iterations must be >= 1");
  if (cfg.contains("gyroscopic_plus_sign")) {
    out.config.gyroscopic_plus_sign = cfg["gyroscopic_plus_sign"].get<bool>();
  }

  const ordered_json& links = field(path, j, "links");
  if (!links.is_array() || links.empty()) fail(path, "links must be a nonempty array");
  for (std::size_t li = 0; li < links.size(); ++li) {
    const ordered_json& lj = links[li];
    RigidLink<double> link;
    link.name = field(path, lj, "name").get<std::string>();
    const std::string where = "link '" + link.name + "'";
    link.is_static = lj.contains("static") && lj["static"].get<bool>();

    const double mass = field(path, lj, "mass").get<double>();
    if (!link.is_static && !(mass > 0.0)) {
      fail(path, where + ": mass must be positive for dynamic links");
    }
    if (mass < 0.0) fail(path, where + ": negative mass");
    link.inv_mass = link.is_static || mass == 0.0 ? 0.0 : 1.0 / mass;

    const ordered_json& in6 = field(path, lj, "inertia");
    if (!in6.is_array() || in6.size() != 6) {
      fail(path, where + ": inertia must be [ixx, iyy, izz, ixy, ixz, iyz]");
    }
    const double ixx = in6[0].get<double>(), iyy = in6[1].get<double>(), izz = in6[2].get<double>();
    const double ixy = in6[3].get<double>(), ixz = in6[4].get<double>(), iyz = in6[5].get<double>();
    link.inertia_local = Mat3{ixx, ixy, ixz, ixy, iyy, iyz, ixz, iyz, izz};
    if (!link.is_static) {
      check_spd(path, where, link.inertia_local);
      link.inv_inertia_local = inverse(link.inertia_local);
    } else {
      link.inv_inertia_local = Mat3{};
    }

    link.com_to_parent_joint = parse_vec3(path, lj, "com_to_parent_joint");
    link.com_to_child_joint = parse_vec3(path, lj, "com_to_child_joint");
    link.link_axis = checked_unit(path, where + ".link_axis", parse_vec3(path, lj, "link_axis"));

    auto parse_axes = [&](const std::string& key) {
      const ordered_json& a = field(path, lj, key);
      if (!a.is_array() || a.size() != 3) fail(path, where + "." + key + " must be 3 columns");
      Mat3 m{};
      for (int c = 0; c < 3; ++c) {
        const ordered_json& col = a[c];
        if (!col.is_array() || col.size() != 3) {
          fail(path, where + "." + key + " column " + std::to_string(c) + " must be a 3-array");
        }
        Vec3 v = checked_unit(path, where + "." + key + " column " + std::to_string(c),
                              Vec3{col[0].get<double>(), col[1].get<double>(), col[2].get<double>()});
        m.set_col(c, v);
      }
      return m;
    };
    link.parent_joint_axes = parse_axes("parent_joint_axes");
    link.child_joint_axes = parse_axes("child_joint_axes");

    link.position = parse_vec3(path, lj, "position");
    const ordered_json& q = field(path, lj, "orientation");
    if (!q.is_array() || q.size() != 4) fail(path, where + ".orientation must be [w, x, y, z]");
    link.orientation = Quat{q[0].get<double>(), q[1].get<double>(), q[2].get<double>(),
                            q[3].get<double>()};
    const double qn = quat_norm(link.orientation);
    if (std::abs(qn - 1.0) > 1e-6) fail(path, where + ".orientation: quaternion not unit norm");
    link.orientation = normalize(link.orientation);
    link.velocity = lj.contains("velocity") ? parse_vec3(path, lj, "velocity") : Vec3{};
    link.angular_velocity =
        lj.contains("angular_velocity") ? parse_vec3(path, lj, "angular_velocity") : Vec3{};

    out.chain.links.push_back(link);
  }

  const ordered_json& joints = field(path, j, "joints");
  if (!joints.is_array()) fail(path, "joints must be an array");
  for (std::size_t ji = 0; ji < joints.size(); ++ji) {
    const ordered_json& jj = joints[ji];
    HingeJoint joint;
    joint.parent = field(path, jj, "parent").get<int>();
    joint.child = field(path, jj, "child").get<int>();
    joint.axis_column = field(path, jj, "axis_column").get<int>();
    const std::string where = "joint " + std::to_string(ji);
    const int n_links = static_cast<int>(out.chain.links.size());
    if (joint.parent < 0 || joint.parent >= n_links || joint.child < 0 || joint.child >= n_links) {
      fail(path, where + ": link index out of range");
    }
    if (joint.parent == joint.child) fail(path, where + ": parent equals child");
    if (joint.axis_column < 0 || joint.axis_column > 2) {
      fail(path, where + ": axis_column must be 0, 1 or 2");
    }
    // Axis convention shared by the angle readout and the posing routine:
    // the hinge column must agree between the two link frames.
    Vec3 a = out.chain.links[joint.parent].child_joint_axes.col(joint.axis_column);
    Vec3 b = out.chain.links[joint.child].parent_joint_axes.col(joint.axis_column);
    if (norm(a - b) > 1e-6) {
      fail(path, where + ": parent outboard axis column differs from child inboard axis column");
    }
    out.chain.joints.push_back(joint);
  }
  return out;
}

void save_chain(const std::string& path, const LoadedChain& data) {
  ordered_json j;
  j["format_version"] = kChainFormatVersion;
  if (!data.notes.empty()) j["notes"] = data.notes;
  ordered_json cfg;
  cfg["dt"] = data.config.dt;
  cfg["gravity"] = vec3_json(data.config.gravity);
  cfg["solver"] = data.config.solver == SolverKind::gauss_seidel ? "gauss_seidel" : "jacobi";
  cfg["iterations"] = data.config.iterations;
  cfg["gyroscopic_plus_sign"] = data.config.gyroscopic_plus_sign;
  j["config"] = cfg;

  j["links"] = ordered_json::array();
  for (const RigidLink<double>& link : data.chain.links) {
    ordered_json lj;
    lj["name"] = link.name;
    lj["static"] = link.is_static;
    lj["mass"] = link.inv_mass > 0.0 ? 1.0 / link.inv_mass : 0.0;
    const Mat3& m = link.inertia_local;
    lj["inertia"] = ordered_json::array(
        {m(0, 0), m(1, 1), m(2, 2), m(0, 1), m(0, 2), m(1, 2)});
    lj["com_to_parent_joint"] = vec3_json(link.com_to_parent_joint);
    lj["com_to_child_joint"] = vec3_json(link.com_to_child_joint);
    auto axes_json = [](const Mat3& a) {
      ordered_json cols = ordered_json::array();
      for (int c = 0; c < 3; ++c) cols.push_back(ordered_json::array({a(0, c), a(1, c), a(2, c)}));
      return cols;
    };
    lj["parent_joint_axes"] = axes_json(link.parent_joint_axes);
    lj["child_joint_axes"] = axes_json(link.child_joint_axes);
    lj["link_axis"] = vec3_json(link.link_axis);
    lj["position"] = vec3_json(link.position);
    lj["orientation"] =
        ordered_json::array({link.orientation.w, link.orientation.x, link.orientation.y,
                             link.orientation.z});
    lj["velocity"] = vec3_json(link.velocity);
    lj["angular_velocity"] = vec3_json(link.angular_velocity);
    j["links"].push_back(lj);
  }

  j["joints"] = ordered_json::array();
  for (const HingeJoint& joint : data.chain.joints) {
    ordered_json jj;
    jj["parent"] = joint.parent;
    jj["child"] = joint.child;
    jj["axis_column"] = joint.axis_column;
    j["joints"].push_back(jj);
  }

  std::ofstream out = open_out(path);
  out << j.dump(2) << "\n";
}

TrajectoryData load_trajectory(const std::string& path) {
  std::ifstream in = open_in(path);
  TrajectoryData data;
  bool saw_joints = false, saw_dt = false, saw_columns = false;
  bool with_rates = false, with_torques = false;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream hs(line.substr(1));
      std::string tag;
      hs >> tag;
      if (tag == "joints:") {
        std::string name;
        while (hs >> name) data.joint_names.push_back(name);
        saw_joints = true;
      } else if (tag == "dt:") {
        std::string tok;
        hs >> tok;
        data.dt = parse_double(path, line_no, tok);
        saw_dt = true;
      } else if (tag == "columns:") {
        std::string col;
        while (hs >> col) {
          if (col == "rate") with_rates = true;
          if (col == "torque") with_torques = true;
          if (col != "time" && col != "angle" && col != "rate" && col != "torque") {
            fail(path, "line " + std::to_string(line_no) + ": unknown column '" + col + "'");
          }
        }
        saw_columns = true;
      }
      continue;
    }
    if (!saw_joints || !saw_dt || !saw_columns) {
      fail(path, "data before complete header (need joints:, dt:, columns:)");
    }
    const std::size_t nj = data.joint_names.size();
    const std::size_t expect = 1 + nj * (1 + (with_rates ? 1 : 0) + (with_torques ? 1 : 0));
    std::istringstream rs(line);
    std::vector<double> row;
    std::string tok;
    while (rs >> tok) row.push_back(parse_double(path, line_no, tok));
    if (row.size() != expect) {
      fail(path, "line " + std::to_string(line_no) + ": expected " + std::to_string(expect) +
                     " columns, got " + std::to_string(row.size()));
    }
    data.times.push_back(row[0]);
    std::size_t k = 1;
    data.angles.emplace_back(row.begin() + k, row.begin() + k + nj);
    k += nj;
    if (with_rates) {
      data.rates.emplace_back(row.begin() + k, row.begin() + k + nj);
      k += nj;
    }
    if (with_torques) {
      data.torques.emplace_back(row.begin() + k, row.begin() + k + nj);
    }
  }
  if (data.times.empty()) fail(path, "no data rows");
  for (std::size_t i = 1; i < data.times.size(); ++i) {
    const double step = data.times[i] - data.times[i - 1];
    if (step <= 0.0) fail(path, "time not strictly increasing at row " + std::to_string(i + 1));
    if (std::abs(step - data.dt) > 1e-9) {
      fail(path, "dt jitter at row " + std::to_string(i + 1) + ": step " + format_double(step) +
                     " vs declared dt " + format_double(data.dt));
    }
  }
  return data;
}

void write_trajectory(const std::string& path, const TrajectoryData& data) {
  if (data.angles.size() != data.times.size()) {
    fail(path, "trajectory has " + std::to_string(data.angles.size()) + " angle rows for " +
                   std::to_string(data.times.size()) + " times");
  }
  std::ofstream out = open_out(path);
  out << "# trajectory\n# joints:";
  for (const std::string& n : data.joint_names) out << " " << n;
  out << "\n# dt: " << format_double(data.dt) << "\n# columns: time angle";
  if (data.has_rates()) out << " rate";
  if (data.has_torques()) out << " torque";
  out << "\n";
  for (std::size_t i = 0; i < data.times.size(); ++i) {
    out << format_double(data.times[i]);
    for (double a : data.angles[i]) out << " " << format_double(a);
    if (data.has_rates()) {
      for (double r : data.rates[i]) out << " " << format_double(r);
    }
    if (data.has_torques()) {
      for (double u : data.torques[i]) out << " " << format_double(u);
    }
    out << "\n";
  }
}

namespace {

ordered_json string_map_json(const std::map<std::string, std::string>& m) {
  ordered_json j = ordered_json::object();
  for (const auto& [k, v] : m) j[k] = v;
  return j;
}

ordered_json double_map_json(const std::map<std::string, double>& m) {
  ordered_json j = ordered_json::object();
  for (const auto& [k, v] : m) j[k] = v;
  return j;
}

}  // namespace

void save_result(const std::string& path, const RunResult& result) {
  ordered_json j;
  j["experiment"] = result.experiment;
  j["config"] = string_map_json(result.config);
  j["loss_history"] = result.loss_history;
  j["fitted"] = double_map_json(result.fitted);
  j["rmse"] = double_map_json(result.rmse);
  ordered_json series = ordered_json::object();
  for (const auto& [k, v] : result.series) series[k] = v;
  j["series"] = series;
  std::ofstream out = open_out(path);
  out << j.dump(2) << "\n";
}

RunResult load_result(const std::string& path) {
  std::ifstream in = open_in(path);
  ordered_json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    fail(path, std::string("JSON parse error: ") + e.what());
  }
  RunResult r;
  r.experiment = field(path, j, "experiment").get<std::string>();
  for (const auto& [k, v] : field(path, j, "config").items()) r.config[k] = v.get<std::string>();
  r.loss_history = field(path, j, "loss_history").get<std::vector<double>>();
  for (const auto& [k, v] : field(path, j, "fitted").items()) r.fitted[k] = v.get<double>();
  for (const auto& [k, v] : field(path, j, "rmse").items()) r.rmse[k] = v.get<double>();
  for (const auto& [k, v] : field(path, j, "series").items()) {
    r.series[k] = v.get<std::vector<double>>();
  }
  return r;
}

void save_map(const std::string& path, const NetTorqueMap& map) {
  ordered_json j;
  j["format_version"] = 1;
  ordered_json g;
  g["n_dtheta"] = map.grid().n_dtheta;
  g["n_omega"] = map.grid().n_omega;
  g["dtheta_max"] = map.grid().dtheta_max;
  g["omega_max"] = map.grid().omega_max;
  j["grid"] = g;
  j["invalid_cells_filled"] = map.invalid_cells_filled();
  j["values"] = map.values();
  std::ofstream out = open_out(path);
  out << j.dump(2) << "\n";
}

NetTorqueMap load_map(const std::string& path) {
  std::ifstream in = open_in(path);
  ordered_json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    fail(path, std::string("JSON parse error: ") + e.what());
  }
  if (field(path, j, "format_version").get<int>() != 1) fail(path, "unsupported format_version");
  const ordered_json& g = field(path, j, "grid");
  GridSpec grid;
  grid.n_dtheta = field(path, g, "n_dtheta").get<int>();
  grid.n_omega = field(path, g, "n_omega").get<int>();
  grid.dtheta_max = field(path, g, "dtheta_max").get<double>();
  grid.omega_max = field(path, g, "omega_max").get<double>();
  std::vector<double> values = field(path, j, "values").get<std::vector<double>>();
  NetTorqueMap map(grid, std::move(values));
  map.set_invalid_cells_filled(field(path, j, "invalid_cells_filled").get<int>());
  return map;
}

namespace {

const std::vector<double>& need_series(const RunResult& r, const std::string& name) {
  auto it = r.series.find(name);
  if (it == r.series.end()) {
    std::string have;
    for (const auto& [k, v] : r.series) {
      if (!have.empty()) have += ", ";
      have += k;
    }
    throw IoError("plot data: result '" + r.experiment + "' lacks series '" + name +
                  "'; available: " + (have.empty() ? "(none)" : have));
  }
  return it->second;
}

void write_columns(const std::string& path, const std::vector<std::string>& headers,
                   const std::vector<const std::vector<double>*>& cols) {
  std::ofstream out = open_out(path);
  out << "#";
  for (const std::string& h : headers) out << " " << h;
  out << "\n";
  std::size_t rows = cols.empty() ? 0 : cols[0]->size();
  for (const auto* c : cols) rows = std::min(rows, c->size());
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t c = 0; c < cols.size(); ++c) {
      if (c) out << " ";
      out << format_double((*cols[c])[i]);
    }
    out << "\n";
  }
}

}  // namespace

std::vector<std::string> emit_plot_data(const RunResult& result, const std::string& kind,
                                        const std::string& out_dir) {
  std::vector<std::string> written;
  auto path_for = [&](const std::string& stem) { return out_dir + "/" + stem + ".dat"; };

  if (kind == "loss-curve") {
    if (result.loss_history.empty()) {
      throw IoError("plot data: result '" + result.experiment + "' has an empty loss history");
    }
    std::vector<double> iters(result.loss_history.size());
    for (std::size_t i = 0; i < iters.size(); ++i) iters[i] = static_cast<double>(i);
    const std::string p = path_for("loss_curve");
    write_columns(p, {"iteration", "loss"}, {&iters, &result.loss_history});
    written.push_back(p);
  } else if (kind == "design-trajectory") {
    const auto& tx = need_series(result, "tip_x");
    const auto& ty = need_series(result, "tip_y");
    const auto& dx = need_series(result, "desired_x");
    const auto& dy = need_series(result, "desired_y");
    const std::string p = path_for("design_trajectory");
    write_columns(p, {"tip_x", "tip_y", "desired_x", "desired_y"}, {&tx, &ty, &dx, &dy});
    written.push_back(p);
  } else if (kind == "power") {
    const auto& time = need_series(result, "time");
    std::vector<std::string> headers{"time"};
    std::vector<const std::vector<double>*> cols{&time};
    for (const auto& [k, v] : result.series) {
      if (k.rfind("power_", 0) == 0) {
        headers.push_back(k);
        cols.push_back(&v);
      }
    }
    if (cols.size() == 1) need_series(result, "power_<joint>");
    const std::string p = path_for("power");
    write_columns(p, headers, cols);
    written.push_back(p);
  } else if (kind == "angle-traces" || kind == "torque-traces") {
    const std::string prefix = kind == "angle-traces" ? "angle" : "torque";
    const auto& time = need_series(result, "time");
    bool any = false;
    for (const auto& [k, v] : result.series) {
      const std::string simtag = prefix + "_sim_";
      if (k.rfind(simtag, 0) != 0) continue;
      const std::string joint = k.substr(simtag.size());
      const auto& ref = need_series(result, prefix + "_ref_" + joint);
      const std::string p = path_for(prefix + "_trace_" + joint);
      write_columns(p, {"time", "sim", "ref"}, {&time, &v, &ref});
      written.push_back(p);
      any = true;
    }
    if (!any) need_series(result, prefix + "_sim_<joint>");
  } else if (kind == "torque-map-grid") {
    const auto& gd = need_series(result, "map_dtheta");
    const auto& go = need_series(result, "map_omega");
    const auto& gv = need_series(result, "map_value");
    const std::string p = path_for("torque_map");
    write_columns(p, {"dtheta", "omega", "net_torque"}, {&gd, &go, &gv});
    written.push_back(p);
  } else if (kind == "impedance-traces") {
    const auto& time = need_series(result, "time");
    const auto& angle = need_series(result, "angle");
    const auto& motor = need_series(result, "motor_torque");
    const auto& ext = need_series(result, "external_torque");
    const auto& pd = need_series(result, "pd_component");
    const auto& imp = need_series(result, "impedance_component");
    const std::string p = path_for("impedance_traces");
    write_columns(p, {"time", "angle", "motor_torque", "external_torque", "pd_component",
                      "impedance_component"},
                  {&time, &angle, &motor, &ext, &pd, &imp});
    written.push_back(p);
  } else {
    throw IoError("plot data: unknown kind '" + kind +
                  "'; known: loss-curve, design-trajectory, power, angle-traces, torque-traces, "
                  "torque-map-grid, impedance-traces");
  }
  return written;
}

}  // namespace diffpbd
