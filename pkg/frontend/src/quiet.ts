/**
 * Route library console chatter to stderr.
 *
 * The CLI speaks line-delimited JSON on stdout in `infer --serve` mode and
 * the evaluator treats the first stdout line as the readiness handshake, so
 * nothing a dependency prints may land there. This module must be imported
 * before anything that pulls in the ML runtime.
 */
console.log = console.error.bind(console);
console.info = console.error.bind(console);

export {};
