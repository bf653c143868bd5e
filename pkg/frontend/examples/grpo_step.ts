/**
 * Mocked trainer step: pull a scored batch from the service and apply the
 * arrays the way an optimizer loop would. No ML framework involved; the
 * "gradient" here is just a weighted sum printed to stdout.
 *
 * Prerequisite: the Python service is running, e.g.
 *   augloop serve --port 8777
 * Run:
 *   npx ts-node --esm examples/grpo_step.ts
 */

import { readFileSync } from 'node:fs';
import { fileURLToPath } from 'node:url';
import { dirname, join } from 'node:path';

import { ClientSession } from '../src/client.js';

const here = dirname(fileURLToPath(import.meta.url));

async function main() {
  const session = new ClientSession({
    endpoint: process.env.AUGLOOP_SERVICE_ENDPOINT ?? 'http://127.0.0.1:8777',
  });
  console.log('service:', await session.health());

  // Reuse the frozen request fixture as a stand-in for a fresh rollout set.
  const request = JSON.parse(readFileSync(
    join(here, '..', '..', 'tests', 'fixtures', 'golden_batch_request.json'),
    'utf-8'));

  const groups = request.groups.map((g: any) => ({
    groupId: g.group_id,
    traces: g.traces.map((t: any) => ({
      traceId: t.trace_id,
      trace: t.trace,
      reward: t.reward,
      logpPolicy: t.logp_policy ?? undefined,
      logpRef: t.logp_ref ?? undefined,
    })),
  }));

  const { arrays } = await session.scoreGroup(groups, {
    beta: request.beta, mode: request.mode,
  });

  console.log(`\nbatch of ${arrays.length} traces`);
  let pseudoLoss = 0;
  for (const trace of arrays) {
    const inLoss = trace.mask.filter(Boolean).length;
    // A real trainer would multiply per-token log-probs by these
    // advantages; here we just fold them into a scalar to show the shapes.
    const advantageMass = trace.advantages.reduce((a, b) => a + b, 0);
    pseudoLoss += -trace.weight * advantageMass;
    console.log(
      `  ${trace.groupId}/${trace.traceId}: reward=${trace.reward.toFixed(3)} ` +
      `in_loss_chars=${inLoss}/${trace.mask.length} weight=${trace.weight.toFixed(4)} ` +
      `kl=${trace.kl ? 'yes' : 'no'}`);
  }
  console.log(`\npseudo loss for this step: ${pseudoLoss.toFixed(6)}`);
}

main().catch((err) => {
  console.error(err);
  process.exit(1);
});
