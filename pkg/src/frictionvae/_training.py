"""Small helpers shared by the training loops."""
import contextlib

import torch


@contextlib.contextmanager
def seeded(seed):
    """Seed torch's global RNG for the block without leaking state."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        yield


def minibatches(n, batch_size, generator):
    """Endless minibatch indices; one fresh permutation per pass over the data."""
    if n < 1:
        raise ValueError("empty dataset")
    batch_size = min(batch_size, n)
    while True:
        order = torch.randperm(n, generator=generator)
        for start in range(0, n - batch_size + 1, batch_size):
            yield order[start:start + batch_size]


def epoch_batches(n, batch_size, generator):
    """Minibatch indices covering one shuffled pass, last batch possibly short."""
    order = torch.randperm(n, generator=generator)
    return [order[s:s + batch_size] for s in range(0, n, batch_size)]


def predict_batched(forward, inputs, chunk=64):
    with torch.no_grad():
        n = len(inputs[0])
        return torch.cat([forward(*(t[s:s + chunk] for t in inputs)) for s in range(0, n, chunk)])


def rmse_loss(pred, target):
    return torch.sqrt(torch.mean((pred - target) ** 2))


def train_regressor(forward, parameters, inputs, target, val=None, *, learning_rate,
                    batch_size, epochs, generator, log=None):
    """Minimise RMSE of ``forward(*inputs)`` against ``target`` with Adam.

    Returns one row per epoch (epoch 0 is the untrained state) holding the
    full-set training RMSE and, when ``val = (inputs, target)`` is given,
    the validation RMSE.
    """
    optimizer = torch.optim.Adam(parameters, lr=learning_rate)

    def evaluate(epoch):
        row = {"epoch": epoch,
               "train_rmse": rmse_loss(predict_batched(forward, inputs), target).item()}
        if val is not None:
            row["val_rmse"] = rmse_loss(predict_batched(forward, val[0]), val[1]).item()
        if log is not None:
            log(row)
        return row

    history = [evaluate(0)]
    for epoch in range(1, epochs + 1):
        for idx in epoch_batches(len(target), batch_size, generator):
            loss = rmse_loss(forward(*(t[idx] for t in inputs)), target[idx])
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
        history.append(evaluate(epoch))
    return history
