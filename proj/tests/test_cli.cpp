#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <unistd.h>

namespace {

struct Run {
    int code = -1;
    std::string out;
};

Run cli(const std::string& args) {
    std::string cmd = std::string(OPSEC_CLI) + " " + args + " 2>&1";
    Run r;
    FILE* p = ::popen(cmd.c_str(), "r");
    if (!p) return r;
    char buf[4096];
    size_t n;
    while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
    int st = ::pclose(p);
    r.code = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
    return r;
}

std::string data(const std::string& name) { return std::string(OPSEC_DATA) + "/" + name; }

std::string tmp(const std::string& name) { return "/tmp/opsec_cli_test_" + std::to_string(::getpid()) + "_" + name; }

std::string first_line(const std::string& path) {
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    return line;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

TEST(Cli, SessionCsvHeader) {
    auto out = tmp("s.csv");
    ASSERT_EQ(cli("simulate " + data("scenario_default.json") + " --out " + out).code, 0);
    EXPECT_EQ(first_line(out),
              "session,client_addr,legacy,outcome,abort_reason,opsec_attempted,fell_back,refused_probes,timeouts,"
              "rounds,assignments,rtt_equivalents,handshake_us,bytes_sent,bytes_delivered,responses_ok,"
              "payload_mismatches,alerts,spoofed_alerts,stream_sent,stream_measured,mean_box_latency_us");
    std::remove(out.c_str());
}

TEST(Cli, LoadCsvHeader) {
    auto out = tmp("l.csv");
    ASSERT_EQ(cli("simulate " + data("scenario_load.json") + " --load --out " + out).code, 0);
    EXPECT_EQ(first_line(out), "flows,mode,theta,p95_us,mean_us,p95_over_single,max_instances,packets");
    std::remove(out.c_str());
}

TEST(Cli, TunnelCsv) {
    auto out = tmp("t.csv");
    ASSERT_EQ(cli("plan " + data("graph_toy.json") + " --legacy " + data("demands_toy.json") +
                  " --opsec-ratio 0.5 --tunnels " + out)
                  .code,
              0);
    auto text = slurp(out);
    EXPECT_EQ(text.substr(0, text.find('\n')), "s,t,kind,volume,via,path");
    EXPECT_NE(text.find(",opsec,"), std::string::npos);
    EXPECT_NE(text.find(",m,"), std::string::npos);
    std::remove(out.c_str());
}

TEST(Cli, EmptyRatioSweepWritesHeaderOnly) {
    auto out = tmp("w.csv");
    ASSERT_EQ(cli("sweep " + data("graph_toy.json") + " --legacy " + data("demands_toy.json") +
                  " --ratios '' --out " + out)
                  .code,
              0);
    EXPECT_EQ(slurp(out), "ratio,objective,tunnels,baseline,relative_increase_pct,status,box_count\n");
    std::remove(out.c_str());
}

TEST(Cli, ExitCodes) {
    EXPECT_EQ(cli("handshake " + data("scenario_default.json")).code, 0);

    auto tamper = cli("handshake " + data("scenario_tamper.json"));
    EXPECT_EQ(tamper.code, 1);
    EXPECT_NE(tamper.out.find("transcript tampered"), std::string::npos);

    auto bad = tmp("bad.json");
    std::ofstream(bad) << R"({"isps": [{"id": 1, "thetta": 3}]})";
    auto r = cli("simulate " + bad);
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.out.find("isps[0].thetta: unknown field"), std::string::npos) << r.out;
    std::remove(bad.c_str());

    EXPECT_EQ(cli("simulate /nonexistent/scenario.json").code, 2);
    EXPECT_EQ(cli("plan " + data("graph_toy_tight.json") + " --legacy " + data("demands_toy.json") +
                  " --opsec-ratio 0.5")
                  .code,
              3);
    EXPECT_EQ(cli("plan " + data("graph_toy.json") + " --legacy " + data("demands_toy.json") +
                  " --opsec-ratio 1.5")
                  .code,
              2);
    EXPECT_EQ(cli("frobnicate").code, 2);
}

TEST(Cli, SeedOverrideChangesRun) {
    auto a = tmp("a.json"), b = tmp("b.json");
    ASSERT_EQ(cli("simulate " + data("scenario_mixed.json") + " --summary " + a).code, 0);
    std::string cmd = "OPSEC_SEED=77 " + std::string(OPSEC_CLI) + " simulate " + data("scenario_mixed.json") +
                      " --summary " + b + " >/dev/null 2>&1";
    ASSERT_EQ(std::system(cmd.c_str()), 0);
    auto sa = slurp(a), sb = slurp(b);
    EXPECT_NE(sa.find("\"seed\""), std::string::npos);
    EXPECT_NE(sb.find("77"), std::string::npos);
    EXPECT_NE(sa, sb);
    std::remove(a.c_str());
    std::remove(b.c_str());
}
