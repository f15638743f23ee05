/* SPDX-License-Identifier: Apache-2.0 */
/* SPDX-FileCopyrightText: Copyright spdmsim authors */

/*
 * C interface to the spdmsim library: fixture generation, a TCP responder
 * server, a requester client and the benchmark harness.
 *
 * Every function returns a spdmsim_status. On failure the calling thread's
 * last error message is available through spdmsim_last_error(). Handles are
 * opaque and owned by the caller, who releases them with the matching
 * *_free function; free functions accept NULL. A handle may be used by one
 * thread at a time.
 */

#ifndef SPDMSIM_H
#define SPDMSIM_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(__GNUC__)
#define SPDMSIM_API __attribute__((visibility("default")))
#else
#define SPDMSIM_API
#endif

typedef enum spdmsim_status
{
    SPDMSIM_OK = 0,
    SPDMSIM_ENCODING_OVERFLOW = 1,
    SPDMSIM_MALFORMED_MESSAGE = 2,
    SPDMSIM_UNSUPPORTED_REQUEST = 3,
    SPDMSIM_VERSION_MISMATCH = 4,
    SPDMSIM_INVALID_REQUEST = 5,
    SPDMSIM_BUSY = 6,
    SPDMSIM_UNEXPECTED_REQUEST = 7,
    SPDMSIM_DECRYPT_ERROR = 8,
    SPDMSIM_KEY_ALGORITHM_MISMATCH = 9,
    SPDMSIM_INVALID_POINT = 10,
    SPDMSIM_LENGTH_EXCEEDED = 11,
    SPDMSIM_UNTRUSTED_ROOT = 12,
    SPDMSIM_BROKEN_LINK = 13,
    SPDMSIM_CRYPTO_FAILURE = 14,
    SPDMSIM_UNKNOWN_CHECKPOINT = 15,
    SPDMSIM_MISSING_HANDSHAKE_SECRET = 16,
    SPDMSIM_INVALID_PHASE = 17,
    SPDMSIM_SEQUENCE_EXHAUSTED = 18,
    SPDMSIM_REPLAY_DETECTED = 19,
    SPDMSIM_SEQUENCE_GAP = 20,
    SPDMSIM_SESSION_NOT_FOUND = 21,
    SPDMSIM_ALGORITHM_MISMATCH = 22,
    SPDMSIM_TIMEOUT = 23,
    SPDMSIM_DIGEST_MISMATCH = 24,
    SPDMSIM_SIGNATURE_INVALID = 25,
    SPDMSIM_NONCE_MISMATCH = 26,
    SPDMSIM_INDEX_OUT_OF_RANGE = 27,
    SPDMSIM_VERIFY_DATA_MISMATCH = 28,
    SPDMSIM_UNKNOWN_PSK_HINT = 29,
    SPDMSIM_VERIFY_NEW_KEY_FAILED = 30,
    SPDMSIM_DUPLICATE_OPCODE = 31,
    SPDMSIM_INVALID_SLOT = 32,
    SPDMSIM_NON_CONTIGUOUS_MEASUREMENT_INDEX = 33,
    SPDMSIM_CAPACITY_EXCEEDED = 34,
    SPDMSIM_CHANNEL_CLOSED = 35,
    SPDMSIM_RANGE_ERROR = 36,
    SPDMSIM_INSUFFICIENT_SAMPLES = 37,
    SPDMSIM_IO_ERROR = 38,
    SPDMSIM_INVALID_ARGUMENT = 39,
    SPDMSIM_INTERNAL = 40
} spdmsim_status;

/* Library version string, e.g. "1.0.0". */
SPDMSIM_API const char* spdmsim_version(void);
/* Stable identifier of a status ("DecryptError"); "Unknown" when out of range. */
SPDMSIM_API const char* spdmsim_status_name(spdmsim_status status);
/* Message of the calling thread's most recent failure; "" after success. */
SPDMSIM_API const char* spdmsim_last_error(void);

/* ---- Fixtures ---------------------------------------------------------- */

/* Writes responder/requester chains, keys and JSON configs into `dir`. */
SPDMSIM_API spdmsim_status spdmsim_generate_fixtures(const char* dir);

/* ---- Responder server -------------------------------------------------- */

typedef struct spdmsim_server spdmsim_server;

/* Serves one responder per TCP connection on `listen_addr` ("host:port",
 * port 0 picks a free port). Each responder also answers RNG requests on
 * application opcode 0x01. */
SPDMSIM_API spdmsim_status spdmsim_server_start(const char* responder_config,
                                                const char* listen_addr,
                                                spdmsim_server** out);
SPDMSIM_API uint16_t spdmsim_server_port(const spdmsim_server* server);
SPDMSIM_API void spdmsim_server_free(spdmsim_server* server);

/* ---- Requester client -------------------------------------------------- */

typedef struct spdmsim_client spdmsim_client;

typedef enum spdmsim_measurement_mode
{
    SPDMSIM_MEASURE_ALL_AT_ONCE = 0,
    SPDMSIM_MEASURE_ONE_BY_ONE = 1
} spdmsim_measurement_mode;

typedef enum spdmsim_session_mode
{
    SPDMSIM_SESSION_CERT_DHE = 0,
    SPDMSIM_SESSION_PSK = 1
} spdmsim_session_mode;

typedef enum spdmsim_key_update_op
{
    SPDMSIM_UPDATE_KEY = 1,
    SPDMSIM_UPDATE_ALL_KEYS = 2
} spdmsim_key_update_op;

SPDMSIM_API spdmsim_status spdmsim_client_connect(const char* requester_config,
                                                  const char* addr,
                                                  spdmsim_client** out);
SPDMSIM_API void spdmsim_client_free(spdmsim_client* client);

/* Version, capabilities and algorithm negotiation. */
SPDMSIM_API spdmsim_status spdmsim_client_init_connection(spdmsim_client* client);
/* Digests, certificate chain of `slot`, challenge. */
SPDMSIM_API spdmsim_status spdmsim_client_authenticate(spdmsim_client* client,
                                                       uint8_t slot);
/* `blocks` receives the block count, `signature_verified` 0 or 1; either may
 * be NULL. */
SPDMSIM_API spdmsim_status spdmsim_client_fetch_measurements(spdmsim_client* client,
                                                             spdmsim_measurement_mode mode,
                                                             size_t* blocks,
                                                             int* signature_verified);
/* PSK mode uses the first hint of the configured PSK table. */
SPDMSIM_API spdmsim_status spdmsim_client_establish_session(spdmsim_client* client,
                                                            spdmsim_session_mode mode,
                                                            uint32_t* session_id);
SPDMSIM_API spdmsim_status spdmsim_client_heartbeat(spdmsim_client* client,
                                                    uint32_t session_id);
SPDMSIM_API spdmsim_status spdmsim_client_key_update(spdmsim_client* client,
                                                     uint32_t session_id,
                                                     spdmsim_key_update_op op);
SPDMSIM_API spdmsim_status spdmsim_client_end_session(spdmsim_client* client,
                                                      uint32_t session_id);
/* Application request inside `session_id`. The response is copied into
 * `out` (capacity `out_cap`); `out_len` always receives its size, and
 * SPDMSIM_CAPACITY_EXCEEDED is returned when it does not fit. */
SPDMSIM_API spdmsim_status spdmsim_client_app_request(spdmsim_client* client,
                                                      uint32_t session_id,
                                                      const uint8_t* request,
                                                      size_t request_len, uint8_t* out,
                                                      size_t out_cap, size_t* out_len);
/* Same over the unprotected baseline path. */
SPDMSIM_API spdmsim_status spdmsim_client_plain_app_request(spdmsim_client* client,
                                                            const uint8_t* request,
                                                            size_t request_len,
                                                            uint8_t* out, size_t out_cap,
                                                            size_t* out_len);
/* Message codes sent and received so far, same capacity convention. */
SPDMSIM_API spdmsim_status spdmsim_client_code_trace(const spdmsim_client* client,
                                                     uint8_t* out, size_t out_cap,
                                                     size_t* out_len);

/* ---- Benchmarks -------------------------------------------------------- */

typedef struct spdmsim_report spdmsim_report;

typedef enum spdmsim_disk_mode
{
    SPDMSIM_DISK_PLAIN = 0,
    SPDMSIM_DISK_SECURED = 1,
    /* Paired plain and secured runs with identical seeds. */
    SPDMSIM_DISK_BOTH = 2
} spdmsim_disk_mode;

typedef enum spdmsim_topology
{
    SPDMSIM_TOPOLOGY_IN_PROCESS = 0,
    SPDMSIM_TOPOLOGY_TCP_LOOPBACK = 1,
    SPDMSIM_TOPOLOGY_TCP_REMOTE = 2
} spdmsim_topology;

typedef enum spdmsim_format
{
    SPDMSIM_FORMAT_JSON = 0,
    SPDMSIM_FORMAT_CSV = 1
} spdmsim_format;

typedef struct spdmsim_bench_options
{
    /* Set by spdmsim_bench_options_init; lets the struct grow. */
    size_t struct_size;
    /* 0 selects the benchmark's default run count. */
    uint32_t runs;
    uint32_t warmup;
    double scale;
    uint64_t seed;
    spdmsim_disk_mode disk_mode;
    /* Latency model; enabled when either value is non-zero. */
    double seek_ms;
    double per_byte_ns;
    spdmsim_topology topology;
    /* "host:port" for SPDMSIM_TOPOLOGY_TCP_REMOTE. */
    const char* remote_address;
    /* Fixture directory from spdmsim_generate_fixtures; NULL generates one. */
    const char* fixtures_dir;
} spdmsim_bench_options;

SPDMSIM_API void spdmsim_bench_options_init(spdmsim_bench_options* options);

/* Per-message timings (default 100 runs). */
SPDMSIM_API spdmsim_status spdmsim_bench_messages(const spdmsim_bench_options* options,
                                                  spdmsim_report** out);
/* The five-step application phase (default 100 runs). */
SPDMSIM_API spdmsim_status spdmsim_bench_app_phase(const spdmsim_bench_options* options,
                                                   spdmsim_report** out);
/* Disk workload preset: dd-small, dd-big, hdparm, ioping, bonnie,
 * fio-seq-read, fio-seq-write, fio-rand-read, fio-rand-rw. */
SPDMSIM_API spdmsim_status spdmsim_bench_disk(const spdmsim_bench_options* options,
                                              const char* preset, spdmsim_report** out);
/* Secured minus plain driver probe time (default 15 runs). */
SPDMSIM_API spdmsim_status spdmsim_bench_boot(const spdmsim_bench_options* options,
                                              spdmsim_report** out);

typedef struct spdmsim_row
{
    /* Valid until the report is freed. */
    const char* label;
    const char* unit;
    size_t n;
    double mean;
    double sd;
    double ci95;
} spdmsim_row;

SPDMSIM_API size_t spdmsim_report_row_count(const spdmsim_report* report);
SPDMSIM_API spdmsim_status spdmsim_report_row(const spdmsim_report* report, size_t index,
                                              spdmsim_row* out);
/* Metadata value for `key`, or NULL. Valid until the report is freed. */
SPDMSIM_API const char* spdmsim_report_meta(const spdmsim_report* report, const char* key);
SPDMSIM_API int spdmsim_report_partial(const spdmsim_report* report);
/* Serialized report; `out_len` receives the size without the terminator.
 * Pass out = NULL to query the size. */
SPDMSIM_API spdmsim_status spdmsim_report_render(const spdmsim_report* report,
                                                 spdmsim_format format, char* out,
                                                 size_t out_cap, size_t* out_len);
SPDMSIM_API spdmsim_status spdmsim_report_write(const spdmsim_report* report,
                                                spdmsim_format format, const char* path);
SPDMSIM_API void spdmsim_report_free(spdmsim_report* report);

#ifdef __cplusplus
}
#endif

#endif /* SPDMSIM_H */
