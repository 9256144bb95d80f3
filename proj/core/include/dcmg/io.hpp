#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "dcmg/sim.hpp"

// Text formats. Every writer emits what the matching reader accepts; numbers
// are written in their shortest exact form so values survive a round trip.
namespace dcmg::io {

// "2.2m", "1.8u", "1.8µ", "10k", "1e-3", "open"/"inf" (for loads).
double parse_quantity(std::string_view text);
std::string format_number(double v);

// Comment lines placed at the top of written files ("# " is prepended).
using Header = std::vector<std::string>;

// [dgu.<id>] r_t l_t c_t v_dc load_r, [line.<i>-<j>] r l
GridGraph read_grid(std::istream& is);
void write_grid(std::ostream& os, const GridGraph& g, const Header& header = {});

struct GainsFile {
    std::map<DguId, ControllerGains> gains;
    std::map<DguId, RationalTf> prefilters;
    std::map<DguId, RationalTf> compensators;
};
// [gains.<id>] k p eta gamma beta delta solver, [prefilter.<id>] num den,
// [compensator.<id>] num den
GainsFile read_gains(std::istream& is);
void write_gains(std::ostream& os, const GainsFile& f, const Header& header = {});

// [request] kind id r_t l_t c_t v_dc load_r line.<j> = r, l
PlugRequest read_request(std::istream& is);
void write_request(std::ostream& os, const PlugRequest& r, const Header& header = {});

// [scenario] duration ref open, [ref] <id> = volts, [initial] v.<id> it.<id>
// line.<i>-<j>, [event.<n>] time kind ...
Scenario read_scenario(std::istream& is);
void write_scenario(std::ostream& os, const Scenario& sc, const Header& header = {});

// Decision report. Reading it back restores the summary fields and the new
// gains; certificate details are informational.
PnpDecision read_decision(std::istream& is);
void write_decision(std::ostream& os, const PnpDecision& d, const Header& header = {});

struct CertificateFile {
    GlobalCertificate global;
    std::map<DguId, CertificateReport> local;
};
CertificateFile read_certificate(std::istream& is);
void write_certificate(std::ostream& os, const CertificateFile& c, const Header& header = {});

// Columns: t, then V<i> It<i> v<i> u<i> IL<i> ref<i> per unit, then
// I<a>_<b> I<b>_<a> per line.
void write_trace_csv(std::ostream& os, const SimTrace& tr);
SimTrace read_trace_csv(std::istream& is);

struct MetricsRow {
    DguId id;
    double t0 = 0.0, t1 = 0.0;
    Metrics m;
};
// Columns: dgu t0 t1 settling_time overshoot steady_state_error
// peak_deviation settled. Readable with read_csv.
void write_metrics(std::ostream& os, const std::vector<MetricsRow>& rows);

struct CsvTable {
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;
    std::size_t column(std::string_view name) const;
};
CsvTable read_csv(std::istream& is);

// File helpers; failures raise InputError naming the path.
std::string slurp(const std::filesystem::path& p);
void save(const std::filesystem::path& p, const std::string& contents);

template <class Reader>
auto read_file(const std::filesystem::path& p, Reader&& reader) {
    std::istringstream is(slurp(p));
    try {
        return reader(is);
    } catch (const InputError& e) {
        throw InputError(p.string() + ": " + e.what());
    }
}

}  // namespace dcmg::io
