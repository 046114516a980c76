/* C interface to the cohsim coherence/NoC simulator.
 *
 * Conventions:
 *   - Configurations are opaque handles; create with cohsim_config_new or
 *     cohsim_config_load, release with cohsim_config_free.
 *   - Fallible calls return COHSIM_OK (0) on success. Positive codes:
 *     1 bad input, 2 simulation abort / exploration bound hit, 3 checker
 *     violation. -1 flags API misuse (null pointer, bad encoding).
 *     cohsim_last_error returns a thread-local message for the most
 *     recent failure on the calling thread.
 *   - Strings stored through char ** out-parameters are owned by the
 *     caller; release them with cohsim_string_free. Pointers returned by
 *     cohsim_last_error and cohsim_version must not be freed.
 *
 * Kept in sync with the exported symbols by a unit test; update both
 * sides together.
 */
#ifndef COHSIM_H
#define COHSIM_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#define COHSIM_OK 0
#define COHSIM_ERR_INPUT 1
#define COHSIM_ERR_SIM 2
#define COHSIM_ERR_VIOLATION 3
#define COHSIM_ERR_API (-1)

/* Opaque simulator configuration. */
typedef struct CohsimConfig CohsimConfig;

/* Library version as a static string; do not free. */
const char *cohsim_version(void);

/* Thread-local message for the most recent failure, or NULL if the last
 * call on this thread succeeded. Valid until the next failing call on the
 * same thread; do not free. */
const char *cohsim_last_error(void);

/* Releases a string stored through a char ** out-parameter. NULL is
 * accepted and ignored. */
void cohsim_string_free(char *s);

/* Creates a configuration with built-in defaults (16 cores, 4x4 mesh,
 * baseline arbitration). Never fails. */
CohsimConfig *cohsim_config_new(void);

/* Loads a TOML configuration file; missing keys take their defaults.
 * Returns NULL on failure (see cohsim_last_error). */
CohsimConfig *cohsim_config_load(const char *path);

/* Releases a configuration handle. NULL is accepted and ignored. */
void cohsim_config_free(CohsimConfig *cfg);

/* Sets one field by name; keys match the TOML file and command-line flags
 * ("cores", "mesh_x", "mode", "seed", ...). Values are parsed from
 * strings. The combination is validated when the config is used, so
 * fields may be set in any order. */
int cohsim_config_set(CohsimConfig *cfg, const char *key, const char *value);

/* Checks that the configuration is internally consistent. */
int cohsim_config_validate(const CohsimConfig *cfg);

/* Simulates a trace file under cfg; stores the metrics report as a JSON
 * string in *out_json (caller frees with cohsim_string_free). */
int cohsim_run(const CohsimConfig *cfg, const char *trace_path, char **out_json);

/* Simulates a trace file twice -- baseline arbitration, then
 * phase-priority -- and stores the side-by-side delta report as JSON in
 * *out_json. The "mode" field of cfg is ignored. */
int cohsim_compare(const CohsimConfig *cfg, const char *trace_path, char **out_json);

/* Exhaustively model-checks the protocol on a small configuration:
 * cores in 1..=4, blocks in 1..=3, ops per core in 1..=4, up to
 * max_states distinct states (0 = default bound). mode is "baseline" or
 * "ppb". A nonzero drop_inv injects a known fault -- an invalidation
 * silently dropped during a read fill -- on a fixed 4-core racing program
 * (the size arguments are then ignored); a sound checker must report it.
 * Returns COHSIM_OK when all reachable states satisfy the coherence,
 * value, and ordering properties; COHSIM_ERR_VIOLATION when a violation
 * was found; COHSIM_ERR_SIM when the state bound was hit first. A JSON
 * summary is stored in *out_json in every outcome. */
int cohsim_check(size_t cores, uint64_t blocks, size_t ops, const char *mode,
                 uint64_t max_states, int drop_inv, char **out_json);

/* Generates a deterministic synthetic trace and writes it to out_path.
 * pattern: "uniform", "hotspot", "producer_consumer", or "private".
 * hot_frac/write_frac are fractions in [0,1]; gap is the mean idle ticks
 * between one core's references. The same arguments always produce the
 * same bytes. */
int cohsim_gen_trace(const char *pattern, size_t refs, size_t cores,
                     uint64_t block_size, uint64_t blocks, uint64_t hot_blocks,
                     double hot_frac, double write_frac, uint64_t gap,
                     uint64_t seed, const char *out_path);

#ifdef __cplusplus
}
#endif

#endif /* COHSIM_H */
